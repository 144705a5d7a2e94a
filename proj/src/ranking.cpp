#include "dext/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dext/error.hpp"
#include "dext/movis.hpp"

namespace dext {

Orientation orientation_for(std::string_view code) {
  if (code.size() != 3) throw Error(ErrorCode::InvalidArgument, "metric code " + std::string(code));
  const bool deletion = code[0] == 'D';
  const bool probability_like = code[1] == 'C' || code[1] == 'B';
  return deletion == probability_like ? Orientation::LowerIsBetter : Orientation::HigherIsBetter;
}

RankTable overall_from_ranks(std::vector<std::string> subjects, std::vector<std::string> metrics,
                             std::vector<std::vector<int>> ranks) {
  if (ranks.size() != subjects.size()) throw Error(ErrorCode::MissingCell, "one rank row per subject");
  for (const auto& row : ranks)
    if (row.size() != metrics.size()) throw Error(ErrorCode::MissingCell, "rank row width");
  RankTable table;
  table.subjects = std::move(subjects);
  table.metrics = std::move(metrics);
  table.ranks = std::move(ranks);
  const std::size_t n = table.subjects.size();
  for (const auto& row : table.ranks) table.row_sums.push_back(std::accumulate(row.begin(), row.end(), 0));
  table.overall.assign(n, 0);
  table.tied.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    int better = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (table.row_sums[j] < table.row_sums[i]) ++better;
      if (j != i && table.row_sums[j] == table.row_sums[i]) table.tied[i] = true;
    }
    table.overall[i] = better + 1;
  }
  return table;
}

RankTable aggregate_ranks(std::vector<std::string> subjects, std::vector<std::string> metrics,
                          const std::vector<std::vector<double>>& aauc, const std::vector<Orientation>& orientation) {
  const std::size_t n = subjects.size();
  const std::size_t m = metrics.size();
  if (aauc.size() != n || orientation.size() != m) throw Error(ErrorCode::MissingCell, "table dimensions");
  for (std::size_t i = 0; i < n; ++i) {
    if (aauc[i].size() != m) throw Error(ErrorCode::MissingCell, "row " + subjects[i]);
    for (std::size_t j = 0; j < m; ++j)
      if (std::isnan(aauc[i][j])) throw Error(ErrorCode::MissingCell, subjects[i] + "/" + metrics[j]);
  }
  std::vector<std::vector<int>> ranks(n, std::vector<int>(m, 0));
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const bool lower = orientation[j] == Orientation::LowerIsBetter;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return lower ? aauc[a][j] < aauc[b][j] : aauc[a][j] > aauc[b][j];
    });
    for (std::size_t r = 0; r < n; ++r) ranks[order[r]][j] = static_cast<int>(r) + 1;
  }
  return overall_from_ranks(std::move(subjects), std::move(metrics), std::move(ranks));
}

double elo_expected(double rating_a, double rating_b) {
  return 1.0 / (1.0 + std::pow(10.0, (rating_b - rating_a) / 400.0));
}

EloLedger::EloLedger(const std::vector<std::string>& methods, double k_factor) : k_(k_factor) {
  for (const auto& m : methods) {
    ratings_[m] = kInitialRating;
    played_[m] = 0;
  }
}

void EloLedger::record_game(const std::string& a, const std::string& b, int score, std::int64_t ts) {
  const auto ia = ratings_.find(a);
  const auto ib = ratings_.find(b);
  if (ia == ratings_.end()) throw Error(ErrorCode::UnknownMethod, a);
  if (ib == ratings_.end()) throw Error(ErrorCode::UnknownMethod, b);
  if (a == b) throw Error(ErrorCode::InvalidArgument, "a game needs two different methods");
  if (score < -2 || score > 2) throw Error(ErrorCode::InvalidArgument, "score must lie in [-2,2]");
  const double outcome = (score + 2) / 4.0;
  const double delta = k_ * (outcome - elo_expected(ia->second, ib->second));
  ia->second += delta;
  ib->second -= delta;
  ++played_[a];
  ++played_[b];
  games_.push_back(Game{a, b, score, ts});
}

EloLedger EloLedger::replay(const std::vector<std::string>& methods, const std::vector<Game>& games, double k_factor) {
  EloLedger ledger(methods, k_factor);
  for (const auto& g : games) ledger.record_game(g.a, g.b, g.score, g.ts);
  return ledger;
}

double EloLedger::rating(const std::string& method) const {
  const auto it = ratings_.find(method);
  if (it == ratings_.end()) throw Error(ErrorCode::UnknownMethod, method);
  return it->second;
}

int EloLedger::games_played(const std::string& method) const {
  const auto it = played_.find(method);
  if (it == played_.end()) throw Error(ErrorCode::UnknownMethod, method);
  return it->second;
}

std::vector<std::pair<std::string, double>> rank_by_rating(const EloLedger& ledger) {
  if (ledger.games().empty()) throw Error(ErrorCode::EmptyLedger, "no games recorded");
  std::vector<std::pair<std::string, double>> order(ledger.ratings().begin(), ledger.ratings().end());
  std::stable_sort(order.begin(), order.end(), [&](const auto& l, const auto& r) {
    if (l.second != r.second) return l.second > r.second;
    const int gl = ledger.games_played(l.first), gr = ledger.games_played(r.first);
    if (gl != gr) return gl < gr;
    return l.first < r.first;
  });
  return order;
}

VoteTally tally_votes(const std::vector<std::string>& answers) {
  VoteTally tally;
  for (MovisMethod m : kAllMovisMethods) tally.counts[std::string(to_string(m))] = 0;
  tally.counts[std::string(kNoneOfTheMethods)] = 0;
  for (const auto& answer : answers) {
    const auto it = tally.counts.find(answer);
    if (it == tally.counts.end()) throw Error(ErrorCode::UnknownOption, answer);
    ++it->second;
    ++tally.total;
  }
  return tally;
}

}  // namespace dext
