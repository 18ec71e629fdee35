#include "grbo/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace grbo {

namespace {

void check_levels(const std::vector<double>& levels, const char* axis) {
  if (levels.empty()) throw std::invalid_argument(std::string(axis) + " levels are empty");
  for (std::size_t k = 1; k < levels.size(); ++k)
    if (!(levels[k] > levels[k - 1]))
      throw std::invalid_argument(std::string(axis) + " levels must be strictly increasing");
  if (std::count(levels.begin(), levels.end(), 0.0) != 1)
    throw std::invalid_argument(std::string(axis) + " levels must contain 0 exactly once");
}

double mean_step(const std::vector<double>& levels) {
  return levels.size() < 2 ? 1.0 : (levels.back() - levels.front()) / (levels.size() - 1);
}

// Index of the nearest level; ties resolve to the lower index.
int nearest_level(const std::vector<double>& levels, double value) {
  const auto it = std::lower_bound(levels.begin(), levels.end(), value);
  if (it == levels.begin()) return 0;
  if (it == levels.end()) return static_cast<int>(levels.size()) - 1;
  const auto hi = static_cast<int>(std::distance(levels.begin(), it));
  return (value - levels[hi - 1] <= levels[hi] - value) ? hi - 1 : hi;
}

}  // namespace

TokenVocabulary::TokenVocabulary() : TokenVocabulary(uniform(7, -4.0, 4.0, 7, -0.5, 0.5)) {}

TokenVocabulary::TokenVocabulary(std::vector<double> accel_levels, std::vector<double> yaw_levels)
    : accel_(std::move(accel_levels)), yaw_(std::move(yaw_levels)) {
  check_levels(accel_, "accel");
  check_levels(yaw_, "yaw");
  if (size() < 2) throw std::invalid_argument("vocabulary needs at least 2 tokens");
  accel_step_ = mean_step(accel_);
  yaw_step_ = mean_step(yaw_);
}

TokenVocabulary TokenVocabulary::uniform(int n_accel, double accel_lo, double accel_hi, int n_yaw,
                                         double yaw_lo, double yaw_hi) {
  const auto grid = [](int n, double lo, double hi) {
    std::vector<double> v;
    for (int k = 0; k < n; ++k) {
      const double x = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
      v.push_back(std::abs(x) < 1e-12 * std::max(std::abs(lo), std::abs(hi)) ? 0.0 : x);
    }
    return v;
  };
  return TokenVocabulary(grid(n_accel, accel_lo, accel_hi), grid(n_yaw, yaw_lo, yaw_hi));
}

int TokenVocabulary::zero_token() const {
  const auto a = std::find(accel_.begin(), accel_.end(), 0.0) - accel_.begin();
  const auto y = std::find(yaw_.begin(), yaw_.end(), 0.0) - yaw_.begin();
  return index(static_cast<int>(a), static_cast<int>(y));
}

ControlCommand detokenize(MotionToken token, const TokenVocabulary& vocab) {
  if (token.index < 0 || token.index >= vocab.size())
    throw std::out_of_range("detokenize: token index " + std::to_string(token.index) +
                            " outside vocabulary of size " + std::to_string(vocab.size()));
  const auto n_yaw = static_cast<int>(vocab.yaw_levels().size());
  return {vocab.accel_levels()[static_cast<std::size_t>(token.index / n_yaw)],
          vocab.yaw_levels()[static_cast<std::size_t>(token.index % n_yaw)]};
}

MotionToken tokenize_command(const ControlCommand& command, const TokenVocabulary& vocab) {
  // The grid is a product of axes, so the normalized Euclidean nearest point separates per axis.
  return {vocab.index(nearest_level(vocab.accel_levels(), command.accel),
                      nearest_level(vocab.yaw_levels(), command.yaw_rate))};
}

MotionToken tokenize_transition(const AgentState& prev, const AgentState& next,
                                const SimConfig& cfg, const TokenVocabulary& vocab) {
  for (double v : {prev.x, prev.y, prev.heading, prev.speed, next.x, next.y, next.heading,
                   next.speed})
    if (!std::isfinite(v)) throw std::invalid_argument("tokenize_transition: non-finite state");

  const double accel = (next.speed - prev.speed) / cfg.dt;
  const double yaw_rate = normalize_angle(next.heading - prev.heading) / cfg.dt;
  const int yaw_index = nearest_level(vocab.yaw_levels(), yaw_rate);
  int accel_index = nearest_level(vocab.accel_levels(), accel);

  constexpr double kEps = 1e-9;
  const bool at_floor = next.speed <= cfg.speed_floor() + kEps;
  const bool at_ceiling = next.speed >= cfg.v_max - kEps;
  if (at_floor || at_ceiling) {
    // Several levels clamp to the same speed; keep the one nearest the implied acceleration
    // among those that reproduce it.
    const auto& levels = vocab.accel_levels();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const double v = std::clamp(prev.speed + levels[k] * cfg.dt, cfg.speed_floor(), cfg.v_max);
      const double d = std::abs(levels[k] - accel);
      if (std::abs(v - next.speed) <= kEps && d < best) {
        best = d;
        accel_index = static_cast<int>(k);
      }
    }
  }
  return {vocab.index(accel_index, yaw_index)};
}

}  // namespace grbo
