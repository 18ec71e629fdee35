#include "grbo/pretrain.hpp"

#include "grbo/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace grbo {

namespace {

constexpr Eigen::Index kChunk = 64;  // fixed reduction granularity, independent of thread count

struct ChunkResult {
  ParamSet grad;
  double weighted_nll = 0.0;
  int correct = 0;
};

ChunkResult chunk_loss_grad(const PolicyModel& model, const NtpBatch& batch, Eigen::Index begin,
                            Eigen::Index count, double weight_total) {
  const auto x = batch.features.middleCols(begin, count);
  const BatchForward pass = forward_batch(model, x);
  ChunkResult out{model.params.zeros_like()};
  Eigen::MatrixXd dz(pass.log_probs.rows(), count);
  for (Eigen::Index c = 0; c < count; ++c) {
    const auto k = static_cast<std::size_t>(begin + c);
    const auto lp = pass.log_probs.col(c);
    const int gt = batch.tokens[k];
    const double w = batch.weights[k] / weight_total;
    out.weighted_nll -= w * lp[gt];
    Eigen::Index best = 0;
    lp.maxCoeff(&best);
    if (best == gt) ++out.correct;
    dz.col(c) = w * lp.array().exp().matrix();
    dz(gt, c) -= w;
  }
  accumulate_batch_logit_grad(model, x, pass, dz, out.grad);
  return out;
}

}  // namespace

NtpBatch NtpBatch::select(const std::vector<std::size_t>& columns) const {
  NtpBatch out;
  out.features.resize(features.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const std::size_t c = columns[k];
    out.features.col(static_cast<Eigen::Index>(k)) = features.col(static_cast<Eigen::Index>(c));
    out.tokens.push_back(tokens[c]);
    out.weights.push_back(weights[c]);
    out.scenario_index.push_back(scenario_index[c]);
    out.agent_id.push_back(agent_id[c]);
    out.time_step.push_back(time_step[c]);
  }
  return out;
}

NtpBatch build_ntp_batch(const std::vector<Scenario>& scenarios, const SimConfig& sim,
                         const TokenVocabulary& vocab, const FeatureConfig& fcfg) {
  std::vector<NtpBatch> parts(scenarios.size());
  parallel_for(scenarios.size(), [&](std::size_t s) {
    const Scenario& sc = scenarios[s];
    if (!sc.demo) return;
    const FeatureContext ctx(sc, sim, fcfg);
    // Full GT history: initial history followed by demo steps 1..T.
    std::vector<Trajectory> gt(sc.num_agents());
    for (std::size_t i = 0; i < sc.num_agents(); ++i) {
      gt[i] = sc.initial_history[i];
      gt[i].insert(gt[i].end(), (*sc.demo)[i].begin() + 1, (*sc.demo)[i].end());
    }
    const std::size_t offset = sc.initial_history.front().size() - 1;
    const int horizon = static_cast<int>((*sc.demo).front().size()) - 1;
    NtpBatch& part = parts[s];
    part.features.resize(fcfg.dim(), static_cast<Eigen::Index>(sc.num_agents()) * horizon);
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < sc.num_agents(); ++i) {
      for (int t = 0; t < horizon; ++t) {
        const std::size_t now = offset + static_cast<std::size_t>(t);
        part.features.col(col++) = extract_features(ctx, sc.agent_id(i), gt, now);
        part.tokens.push_back(tokenize_transition(gt[i][now], gt[i][now + 1], sim, vocab).index);
        part.weights.push_back(1.0 / horizon);
        part.scenario_index.push_back(static_cast<std::uint32_t>(s));
        part.agent_id.push_back(sc.agent_id(i));
        part.time_step.push_back(t);
      }
    }
  });
  NtpBatch all;
  Eigen::Index total = 0;
  for (const NtpBatch& p : parts) total += static_cast<Eigen::Index>(p.size());
  all.features.resize(fcfg.dim(), total);
  Eigen::Index col = 0;
  for (NtpBatch& p : parts) {
    const auto n = static_cast<Eigen::Index>(p.size());
    if (n == 0) continue;
    all.features.middleCols(col, n) = p.features;
    col += n;
    all.tokens.insert(all.tokens.end(), p.tokens.begin(), p.tokens.end());
    all.weights.insert(all.weights.end(), p.weights.begin(), p.weights.end());
    all.scenario_index.insert(all.scenario_index.end(), p.scenario_index.begin(),
                              p.scenario_index.end());
    all.agent_id.insert(all.agent_id.end(), p.agent_id.begin(), p.agent_id.end());
    all.time_step.insert(all.time_step.end(), p.time_step.begin(), p.time_step.end());
  }
  return all;
}

NtpResult ntp_loss_and_grad(const PolicyModel& model, const NtpBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("ntp_loss_and_grad: empty batch");
  if (batch.features.rows() != model.params.input_dim())
    throw std::invalid_argument("ntp_loss_and_grad: feature dimension mismatch");
  for (int tok : batch.tokens)
    if (tok < 0 || tok >= model.vocab_size())
      throw std::invalid_argument("ntp_loss_and_grad: token outside vocabulary");
  const double weight_total = std::accumulate(batch.weights.begin(), batch.weights.end(), 0.0);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto n_chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  std::vector<ChunkResult> chunks(n_chunks);
  parallel_for(n_chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    chunks[c] = chunk_loss_grad(model, batch, begin, std::min(kChunk, n - begin), weight_total);
  });
  NtpResult out{0.0, model.params.zeros_like(), 0.0};
  int correct = 0;
  for (const ChunkResult& c : chunks) {
    out.loss += c.weighted_nll;
    out.gradient += c.grad;
    correct += c.correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

double token_accuracy(const PolicyModel& model, const NtpBatch& batch) {
  if (batch.size() == 0) return 0.0;
  const ParamSet& p = model.params;
  const Eigen::MatrixXd hidden =
      ((p.w1 * batch.features).colwise() + p.b1).array().tanh().matrix();
  const Eigen::MatrixXd z = (p.w2 * hidden).colwise() + p.b2;
  int correct = 0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    Eigen::Index best = 0;
    z.col(c).maxCoeff(&best);
    if (best == batch.tokens[static_cast<std::size_t>(c)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(z.cols());
}

PretrainResult pretrain(const std::vector<Scenario>& scenarios, const SimConfig& sim,
                        const PretrainConfig& cfg, const TokenVocabulary& vocab,
                        const FeatureConfig& features,
                        const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (std::none_of(scenarios.begin(), scenarios.end(),
                   [](const Scenario& s) { return s.demo.has_value(); }))
    throw std::invalid_argument("pretrain: no scenario carries a demonstration");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw std::invalid_argument("pretrain: bad config");

  const NtpBatch data = build_ntp_batch(scenarios, sim, vocab, features);
  Rng rng = make_rng(cfg.seed, {0x11});
  PretrainResult result{PolicyModel::random(vocab, features, cfg.hidden, rng), {}, {}, {}};
  result.optimizer = OptimizerState::for_model(result.model, cfg.learning_rate);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> cols(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const NtpResult r = ntp_loss_and_grad(result.model, data.select(cols));
      adam_step(result.model, r.gradient, result.optimizer);
      loss_sum += r.loss * static_cast<double>(cols.size());
      acc_sum += r.accuracy * static_cast<double>(cols.size());
      seen += cols.size();
    }
    PretrainEpoch row{epoch, loss_sum / static_cast<double>(seen),
                      acc_sum / static_cast<double>(seen)};
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.reference = result.model;
  return result;
}

}  // namespace grbo
