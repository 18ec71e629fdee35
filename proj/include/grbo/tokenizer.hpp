#pragma once

#include "grbo/scene.hpp"

#include <vector>

namespace grbo {

/// Discrete motion-token vocabulary: the Cartesian grid of acceleration and yaw-rate levels.
/// Token index = accel_index * |yaw_levels| + yaw_index.
class TokenVocabulary {
 public:
  /// 7 x 7 default grid: accel uniform over [-4, 4], yaw rate uniform over [-0.5, 0.5].
  TokenVocabulary();
  /// Throws std::invalid_argument unless both level lists are strictly increasing, contain 0
  /// exactly once, and the grid has at least 2 tokens.
  TokenVocabulary(std::vector<double> accel_levels, std::vector<double> yaw_levels);

  static TokenVocabulary uniform(int n_accel, double accel_lo, double accel_hi, int n_yaw,
                                 double yaw_lo, double yaw_hi);

  int size() const { return static_cast<int>(accel_.size() * yaw_.size()); }
  const std::vector<double>& accel_levels() const { return accel_; }
  const std::vector<double>& yaw_levels() const { return yaw_; }

  /// Mean spacing per axis; the unit of the "normalized level" distance.
  double accel_step() const { return accel_step_; }
  double yaw_step() const { return yaw_step_; }

  int index(int accel_index, int yaw_index) const {
    return accel_index * static_cast<int>(yaw_.size()) + yaw_index;
  }
  int zero_token() const;

  friend bool operator==(const TokenVocabulary& a, const TokenVocabulary& b) {
    return a.accel_ == b.accel_ && a.yaw_ == b.yaw_;
  }

 private:
  std::vector<double> accel_;
  std::vector<double> yaw_;
  double accel_step_ = 1.0;
  double yaw_step_ = 1.0;
};

struct MotionToken {
  int index = 0;
  friend bool operator==(const MotionToken&, const MotionToken&) = default;
};

/// Throws std::out_of_range for an index outside [0, |V|).
ControlCommand detokenize(MotionToken token, const TokenVocabulary& vocab);

/// Nearest grid command in normalized level units; ties go to the lower index.
MotionToken tokenize_command(const ControlCommand& command, const TokenVocabulary& vocab);

/// Inverse dynamics of `transition` followed by nearest-grid quantization. When the next speed sits
/// on a clamp boundary several accel levels reproduce it; the one nearest the implied acceleration
/// wins, lower index on exact ties.
/// Throws std::invalid_argument on non-finite states.
MotionToken tokenize_transition(const AgentState& prev, const AgentState& next,
                                const SimConfig& cfg, const TokenVocabulary& vocab);

}  // namespace grbo
