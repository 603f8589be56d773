#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/forensics.hpp"
#include "fsf/image_io.hpp"
#include "fsf/manifest.hpp"
#include "fsf/nn/model.hpp"
#include "fsf/parallel.hpp"
#include "fsf/rng.hpp"

namespace fsf::nn {

using Net = Model<float>;

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 2;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.1;
  bool augment = true;
  AugmentPolicy policy;  // crop is overridden by the model input size
  std::uint64_t seed = 1;
};

inline void validate_train_config(const TrainConfig& t) {
  if (t.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (t.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (t.patience == 0) throw ConfigError("patience must be positive");
  if (!(t.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(t.beta1 >= 0 && t.beta1 < 1 && t.beta2 >= 0 && t.beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(t.val_fraction > 0 && t.val_fraction < 1)) throw ConfigError("val_fraction must lie in (0, 1)");
  try {
    validate_policy(t.policy);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

struct Sample {
  Image image;
  Label label = Label::real;
  std::string pipeline;
  std::string path;
};

inline std::vector<Sample> load_samples(const CorpusManifest& m) {
  if (m.entries.empty()) throw DataError("manifest has no entries");
  std::vector<Sample> out(m.entries.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& e = m.entries[i];
    auto img = read_pnm(m.resolve(e));
    out[i] = {img.channels() == 1 ? std::move(img) : to_grayscale(img), e.label, e.pipeline, e.path};
  });
  return out;
}

// Crop/pad to the model size, then the noise residual, as float.
inline Tensor<float> model_input(const Image& img, std::size_t size) {
  const Image gray = img.channels() == 1 ? img : to_grayscale(img);
  return noise_residual(center_crop_pad(gray, size)).cast<float>();
}

inline float label_target(Label l) { return l == Label::generated ? 1.0f : 0.0f; }

// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(const ModelConfig& c, const TrainConfig& t)
      : m_(ModelParams<T>::zeros(c)), v_(ModelParams<T>::zeros(c)), cfg_(t) {}

  void step(ModelParams<T>& params, const ModelParams<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    auto p = params.named();
    auto g = grads.named();
    auto m = m_.named();
    auto v = v_.named();
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& pv = p[k].second->vec();
      const auto& gv = g[k].second->vec();
      auto& mv = m[k].second->vec();
      auto& vv = v[k].second->vec();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double gi = gv[i];
        mv[i] = T(cfg_.beta1 * mv[i] + (1 - cfg_.beta1) * gi);
        vv[i] = T(cfg_.beta2 * vv[i] + (1 - cfg_.beta2) * gi * gi);
        const double mh = mv[i] / c1, vh = vv[i] / c2;
        pv[i] = T(pv[i] - cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.adam_eps));
      }
    }
  }

 private:
  ModelParams<T> m_, v_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

struct TrainResult {
  Net model;  // weights of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  double train_accuracy = 0;  // best model on the training split, no augmentation
  std::size_t train_count = 0;
  std::size_t val_count = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val;
};

// Stratified by label; deterministic in the seed.
inline SplitIndices split_train_val(const std::vector<Sample>& samples, double val_fraction, std::uint64_t seed) {
  SplitIndices s;
  Rng rng(mix_seed(seed, 0x5e1));
  for (Label l : {Label::real, Label::generated}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].label == l) idx.push_back(i);
    rng.shuffle(idx.begin(), idx.end());
    std::size_t n_val = std::size_t(std::ceil(val_fraction * double(idx.size())));
    n_val = std::min(n_val, idx.size() - 1);
    s.val.insert(s.val.end(), idx.begin(), idx.begin() + std::ptrdiff_t(n_val));
    s.train.insert(s.train.end(), idx.begin() + std::ptrdiff_t(n_val), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

struct LossAccuracy {
  double loss = 0;
  double accuracy = 0;
};

inline LossAccuracy score(const Net& model, const std::vector<Tensor<float>>& inputs, const std::vector<float>& targets) {
  std::vector<double> logits(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { logits[i] = model.forward(inputs[i]); });
  LossAccuracy r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    r.loss += bce_with_logit(logits[i], targets[i]);
    r.accuracy += (logits[i] > 0) == (targets[i] > 0.5f);
  }
  r.loss /= double(inputs.size());
  r.accuracy /= double(inputs.size());
  return r;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const std::vector<Sample>& samples, const ModelConfig& mc, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  validate_model_config(mc);
  validate_train_config(tc);
  std::size_t n_real = 0;
  for (const auto& s : samples) n_real += s.label == Label::real;
  if (n_real == 0 || n_real == samples.size())
    throw DataError("training manifest must contain both real and generated images");

  const auto split = split_train_val(samples, tc.val_fraction, tc.seed);
  const std::size_t S = mc.input_size;
  AugmentPolicy policy = tc.policy;
  policy.crop = S;

  auto clean_inputs = [&](const std::vector<std::size_t>& idx) {
    std::vector<Tensor<float>> x(idx.size());
    parallel_for(idx.size(), [&](std::size_t k) { x[k] = model_input(samples[idx[k]].image, S); });
    return x;
  };
  auto targets_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<float> y;
    for (auto i : idx) y.push_back(label_target(samples[i].label));
    return y;
  };
  const auto val_x = clean_inputs(split.val);
  const auto val_y = targets_of(split.val);
  const auto train_clean = clean_inputs(split.train);

  Net model(mc, mix_seed(tc.seed, 0x1417));
  Adam<float> opt(mc, tc);
  TrainResult result;
  result.train_count = split.train.size();
  result.val_count = split.val.size();
  result.best_val_loss = std::numeric_limits<double>::infinity();
  result.model = model;

  std::vector<ModelParams<float>> sample_grads(std::min(tc.batch_size, split.train.size()),
                                               ModelParams<float>::zeros(mc));
  auto batch_grad = ModelParams<float>::zeros(mc);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::vector<std::size_t> order(split.train.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    Rng shuffle_rng(mix_seed(tc.seed, 0x5000 + epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      std::vector<double> losses(n);
      std::vector<char> hits(n);
      parallel_for(n, [&](std::size_t b) {
        const std::size_t k = order[start + b];
        const auto& s = samples[split.train[k]];
        Tensor<float> x;
        if (tc.augment) {
          Rng rng(mix_seed(mix_seed(tc.seed, epoch), split.train[k]));
          x = noise_residual(augment(s.image, policy, rng)).cast<float>();
        } else {
          x = train_clean[k];
        }
        Trace<float> tr;
        const double z = model.forward(x, &tr);
        const double y = label_target(s.label);
        losses[b] = bce_with_logit(z, y);
        hits[b] = (z > 0) == (y > 0.5);
        sample_grads[b].set_zero();
        model.backward(tr, float(bce_with_logit_grad(z, y) / double(n)), sample_grads[b]);
      });
      batch_grad.set_zero();
      for (std::size_t b = 0; b < n; ++b) {
        loss_sum += losses[b];
        correct += std::size_t(hits[b]);
        batch_grad.accumulate(sample_grads[b]);
      }
      if (!std::isfinite(loss_sum))
        throw NumericError("training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      opt.step(model.params(), batch_grad);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(order.size());
    rec.train_accuracy = double(correct) / double(order.size());
    const auto val = score(model, val_x, val_y);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    if (!std::isfinite(rec.val_loss))
      throw NumericError("training diverged (non-finite validation loss) in epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
  }
  result.train_accuracy = score(result.model, train_clean, targets_of(split.train)).accuracy;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct Prediction {
  std::string path;
  Label label = Label::real;
  std::string pipeline;
  double logit = 0;
};

inline std::vector<Prediction> predict(const Net& model, const std::vector<Sample>& samples,
                                       const DistortionConfig& distortion) {
  std::vector<Prediction> out(samples.size());
  const std::size_t S = model.config().input_size;
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    const auto x = model_input(apply_distortion(s.image, distortion), S);
    out[i] = {s.path, s.label, s.pipeline, double(model.forward(x))};
  });
  return out;
}

inline bool predicts_generated(const Prediction& p) { return p.logit > 0; }

// Accuracy per pipeline id plus "overall". A generated pipeline's accuracy
// is balanced against the real images: 0.5 * (TPR_pipeline + TNR_real); with
// no real images it is the pipeline's TPR. The "real" row is the TNR.
inline std::map<std::string, double> pipeline_accuracy(const std::vector<Prediction>& preds) {
  if (preds.empty()) throw DataError("no predictions to score");
  std::map<std::string, std::pair<std::size_t, std::size_t>> hits;  // id -> (correct, total)
  std::size_t correct = 0, real_correct = 0, real_total = 0;
  for (const auto& p : preds) {
    const bool ok = predicts_generated(p) == (p.label == Label::generated);
    correct += ok;
    if (p.label == Label::real) {
      real_correct += ok;
      ++real_total;
    } else {
      auto& h = hits[p.pipeline];
      h.first += ok;
      ++h.second;
    }
  }
  std::map<std::string, double> acc;
  const double tnr = real_total ? double(real_correct) / double(real_total) : 0.0;
  for (const auto& [id, h] : hits) {
    const double tpr = double(h.first) / double(h.second);
    acc[id] = real_total ? 0.5 * (tpr + tnr) : tpr;
  }
  if (real_total) acc["real"] = tnr;
  acc["overall"] = double(correct) / double(preds.size());
  return acc;
}

// Balanced accuracy over the union of the given generated pipelines.
inline double group_accuracy(const std::vector<Prediction>& preds, const std::vector<std::string>& pipelines) {
  std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
  for (const auto& p : preds) {
    if (p.label == Label::real) {
      tn += !predicts_generated(p);
      ++neg;
    } else if (std::find(pipelines.begin(), pipelines.end(), p.pipeline) != pipelines.end()) {
      tp += predicts_generated(p);
      ++pos;
    }
  }
  if (pos == 0) throw DataError("no generated images from the requested pipelines");
  const double tpr = double(tp) / double(pos);
  return neg ? 0.5 * (tpr + double(tn) / double(neg)) : tpr;
}

// Rows: pipeline ids (generated ones first, then real, then overall);
// columns: distortions.
struct AccuracyTable {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> values;  // [row][column]

  double at(const std::string& row, const std::string& col) const {
    const auto r = std::find(rows.begin(), rows.end(), row);
    const auto c = std::find(columns.begin(), columns.end(), col);
    if (r == rows.end() || c == columns.end()) throw DataError("no table cell " + row + "/" + col);
    return values[std::size_t(r - rows.begin())][std::size_t(c - columns.begin())];
  }
};

inline AccuracyTable evaluate(const Net& model, const std::vector<Sample>& samples,
                              const std::vector<DistortionConfig>& distortions) {
  if (samples.empty()) throw DataError("evaluation manifest is empty");
  AccuracyTable t;
  std::vector<std::map<std::string, double>> cols;
  for (const auto& d : distortions) {
    t.columns.push_back(d.name());
    cols.push_back(pipeline_accuracy(predict(model, samples, d)));
  }
  for (const auto& [id, v] : cols.front())
    if (id != "real" && id != "overall") t.rows.push_back(id);
  if (cols.front().count("real")) t.rows.push_back("real");
  t.rows.push_back("overall");
  for (const auto& r : t.rows) {
    std::vector<double> row;
    for (const auto& c : cols) row.push_back(c.at(r));
    t.values.push_back(std::move(row));
  }
  return t;
}

}  // namespace fsf::nn
