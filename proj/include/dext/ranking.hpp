#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dext {

enum class Orientation { LowerIsBetter, HigherIsBetter };

// Deletion curves of probability/IoU effects reward a fast drop (lower AUC);
// insertion curves reward a fast rise. Pixel-error effects flip both.
Orientation orientation_for(std::string_view metric_code);

struct RankTable {
  std::vector<std::string> subjects;
  std::vector<std::string> metrics;
  std::vector<std::vector<int>> ranks;  // [subject][metric], 1 is best
  std::vector<int> row_sums;
  std::vector<int> overall;             // 1 is best; tied rows share the better rank
  std::vector<bool> tied;
};

// Overall ranking from per-metric rank rows by ascending row sum.
RankTable overall_from_ranks(std::vector<std::string> subjects, std::vector<std::string> metrics,
                             std::vector<std::vector<int>> ranks);

// Ranks each metric column under its orientation (equal values keep subject
// order), then aggregates. NaN cells raise MissingCell.
RankTable aggregate_ranks(std::vector<std::string> subjects, std::vector<std::string> metrics,
                          const std::vector<std::vector<double>>& aauc, const std::vector<Orientation>& orientation);

struct Game {
  std::string a;
  std::string b;
  int score = 0;  // -2..2 from a's point of view
  std::int64_t ts = 0;
};

// Elo ratings over explanation methods with an append-only game log.
class EloLedger {
 public:
  static constexpr double kInitialRating = 1000.0;
  static constexpr double kDefaultK = 32.0;

  explicit EloLedger(const std::vector<std::string>& methods, double k_factor = kDefaultK);

  // Outcome (s+2)/4 against the logistic expectation; zero-sum update.
  void record_game(const std::string& a, const std::string& b, int score, std::int64_t ts = 0);

  static EloLedger replay(const std::vector<std::string>& methods, const std::vector<Game>& games,
                          double k_factor = kDefaultK);

  double rating(const std::string& method) const;
  const std::map<std::string, double>& ratings() const { return ratings_; }
  const std::vector<Game>& games() const { return games_; }
  int games_played(const std::string& method) const;
  double k_factor() const { return k_; }

 private:
  double k_;
  std::map<std::string, double> ratings_;
  std::map<std::string, int> played_;
  std::vector<Game> games_;
};

double elo_expected(double rating_a, double rating_b);

// Descending rating; ties by fewer games, then name.
std::vector<std::pair<std::string, double>> rank_by_rating(const EloLedger& ledger);

inline constexpr std::string_view kNoneOfTheMethods = "none";

struct VoteTally {
  std::map<std::string, int> counts;  // each visualization method plus "none"
  int total = 0;
};

VoteTally tally_votes(const std::vector<std::string>& answers);

}  // namespace dext
