#include "dtgan/dtgan.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "dtgan/common.hpp"
#include "dtgan/sanitizer.hpp"
#include "json.hpp"

namespace dtgan::gan {

using neural::Activation;
using neural::DenseNetF;
using tabular::ColumnKind;
using tabular::Schema;
using tabular::Table;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::dp_discriminator: return "dp_discriminator";
    case Variant::dp_generator: return "dp_generator";
  }
  return "none";
}

Variant variant_from_name(const std::string& name) {
  if (name == "none") return Variant::none;
  if (name == "dp_discriminator") return Variant::dp_discriminator;
  if (name == "dp_generator") return Variant::dp_generator;
  throw ConfigError("unknown variant: " + name);
}

void DtganConfig::validate() const {
  if (tau < 0.0) throw ConfigError("tau must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
  if (noise_dim < 1) throw ConfigError("noise_dim must be >= 1");
  if (variant == Variant::dp_generator && shards < 2) {
    throw ConfigError("dp_generator needs at least 2 shards");
  }
  if (budget) {
    if (!(budget->epsilon > 0.0)) throw ConfigError("budget epsilon must be > 0");
    if (!(budget->delta > 0.0 && budget->delta < 1.0)) throw ConfigError("delta must lie in (0,1)");
  }
  if (variant == Variant::none && max_epochs < 1) {
    throw ConfigError("non-private training needs max_epochs");
  }
  if (variant != Variant::none && !budget && max_epochs < 1) {
    throw ConfigError("private training needs a budget or max_epochs");
  }
  if (variant != Variant::none && sigma <= 0.0 && !(budget && max_epochs > 0)) {
    throw ConfigError("sigma must be > 0 (or provide budget plus max_epochs for calibration)");
  }
  if (preset != "default" && preset != "baseline") {
    throw ConfigError("preset must be 'default' or 'baseline'");
  }
  if (lr <= 0.0f) throw ConfigError("lr must be > 0");
}

std::string DtganConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = variant_name(variant);
  j["sigma"] = sigma;
  j["tau"] = tau;
  j["batch"] = batch;
  j["n_critic"] = n_critic;
  if (budget) {
    j["epsilon"] = budget->epsilon;
    j["delta"] = budget->delta;
  }
  j["max_epochs"] = max_epochs;
  j["shards"] = shards;
  j["info_loss"] = info_loss;
  j["classification_loss"] = classification_loss;
  j["condition_loss"] = condition_loss;
  j["strict_dp"] = strict_dp;
  j["seed"] = seed;
  j["noise_dim"] = noise_dim;
  j["gen_hidden"] = gen_hidden;
  j["disc_hidden"] = disc_hidden;
  j["cls_hidden"] = cls_hidden;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["preset"] = preset;
  return j.dump(2);
}

DtganConfig DtganConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  static const std::vector<std::string> known = {
      "variant",   "sigma",      "tau",        "batch",          "n_critic",
      "epsilon",   "delta",      "max_epochs", "shards",         "info_loss",
      "classification_loss",     "condition_loss",               "strict_dp",
      "seed",      "noise_dim",  "gen_hidden", "disc_hidden",    "cls_hidden",
      "lr",        "beta1",      "beta2",      "preset"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key: " + key);
    }
  }
  DtganConfig cfg;
  if (j.contains("variant")) cfg.variant = variant_from_name(j["variant"].get<std::string>());
  if (j.contains("sigma")) cfg.sigma = j["sigma"].get<double>();
  if (j.contains("tau")) cfg.tau = j["tau"].get<double>();
  if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
  if (j.contains("n_critic")) cfg.n_critic = j["n_critic"].get<int>();
  if (j.contains("epsilon")) {
    double delta = j.contains("delta") ? j["delta"].get<double>() : 1e-5;
    cfg.budget = accountant::DpBudget{j["epsilon"].get<double>(), delta};
  } else if (j.contains("delta")) {
    throw ConfigError("delta given without epsilon");
  }
  if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"].get<long>();
  if (j.contains("shards")) cfg.shards = j["shards"].get<int>();
  if (j.contains("info_loss")) cfg.info_loss = j["info_loss"].get<bool>();
  if (j.contains("classification_loss"))
    cfg.classification_loss = j["classification_loss"].get<bool>();
  if (j.contains("condition_loss")) cfg.condition_loss = j["condition_loss"].get<bool>();
  if (j.contains("strict_dp")) cfg.strict_dp = j["strict_dp"].get<bool>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("noise_dim")) cfg.noise_dim = j["noise_dim"].get<int>();
  if (j.contains("gen_hidden")) cfg.gen_hidden = j["gen_hidden"].get<std::vector<int>>();
  if (j.contains("disc_hidden")) cfg.disc_hidden = j["disc_hidden"].get<std::vector<int>>();
  if (j.contains("cls_hidden")) cfg.cls_hidden = j["cls_hidden"].get<std::vector<int>>();
  if (j.contains("lr")) cfg.lr = j["lr"].get<float>();
  if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<float>();
  if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<float>();
  if (j.contains("preset")) cfg.preset = j["preset"].get<std::string>();
  return cfg;
}

std::string StepRecord::to_json() const {
  nlohmann::json j;
  j["iteration"] = iteration;
  j["charged_steps"] = charged_steps;
  j["wasserstein"] = losses.wasserstein;
  j["penalty"] = losses.penalty;
  j["grad_norm_mean"] = losses.grad_norm_mean;
  j["adversarial"] = losses.adversarial;
  j["info_mean"] = losses.info_mean;
  j["info_sd"] = losses.info_sd;
  j["classification"] = losses.classification;
  j["condition"] = losses.condition;
  if (std::isinf(epsilon)) {
    j["epsilon"] = "inf";
  } else {
    j["epsilon"] = epsilon;
  }
  return j.dump();
}

Eigen::VectorXf slerp(const Eigen::VectorXf& x0, const Eigen::VectorXf& x1, float t) {
  float n0 = x0.norm();
  float n1 = x1.norm();
  if (n0 < 1e-12f || n1 < 1e-12f) return (1.0f - t) * x0 + t * x1;
  float cos_omega = std::clamp(x0.dot(x1) / (n0 * n1), -1.0f, 1.0f);
  float omega = std::acos(cos_omega);
  float sin_omega = std::sin(omega);
  if (sin_omega < 1e-7f) return (1.0f - t) * x0 + t * x1;
  return (std::sin((1.0f - t) * omega) / sin_omega) * x0 + (std::sin(t * omega) / sin_omega) * x1;
}

Eigen::MatrixXf slerp_batch(const Eigen::MatrixXf& x0, const Eigen::MatrixXf& x1,
                            const Eigen::VectorXf& ts) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols() || ts.size() != x0.rows()) {
    throw ConfigError("slerp batch shape mismatch");
  }
  Eigen::MatrixXf out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    out.row(i) = slerp(x0.row(i).transpose(), x1.row(i).transpose(), ts[i]).transpose();
  }
  return out;
}

OutputTransform::OutputTransform(const Schema& schema) : width_(schema.encoded_width()) {
  for (size_t c = 0; c < schema.num_columns(); ++c) {
    blocks_.push_back({schema.encoded_offset(c), schema.column(c).encoded_width(),
                       schema.column(c).kind == ColumnKind::categorical});
  }
}

Eigen::MatrixXf OutputTransform::forward(const Eigen::MatrixXf& raw) const {
  if (raw.cols() != width_) throw ConfigError("raw output width mismatch");
  Eigen::MatrixXf out(raw.rows(), raw.cols());
  for (const Block& b : blocks_) {
    if (!b.categorical) {
      out.col(b.offset) = raw.col(b.offset).array().tanh();
      continue;
    }
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      float mx = raw.row(i).segment(b.offset, b.width).maxCoeff();
      float sum = 0.0f;
      for (int k = 0; k < b.width; ++k) {
        float e = std::exp(raw(i, b.offset + k) - mx);
        out(i, b.offset + k) = e;
        sum += e;
      }
      out.row(i).segment(b.offset, b.width) /= sum;
    }
  }
  return out;
}

Eigen::MatrixXf OutputTransform::backward(const Eigen::MatrixXf& y,
                                          const Eigen::MatrixXf& dy) const {
  Eigen::MatrixXf out = Eigen::MatrixXf::Zero(y.rows(), y.cols());
  for (const Block& b : blocks_) {
    if (!b.categorical) {
      out.col(b.offset) =
          dy.col(b.offset).array() * (1.0f - y.col(b.offset).array().square());
      continue;
    }
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      auto yb = y.row(i).segment(b.offset, b.width);
      auto gb = dy.row(i).segment(b.offset, b.width);
      float dot = yb.dot(gb);
      out.row(i).segment(b.offset, b.width) = yb.array() * (gb.array() - dot);
    }
  }
  return out;
}

DiscGradComponents d_grad_components(const DenseNetF& critic, const Eigen::MatrixXf& real,
                                     const Eigen::MatrixXf& fake, const Eigen::VectorXf& ts,
                                     double tau) {
  if (real.cols() != fake.cols()) throw ConfigError("real/fake width mismatch");
  DiscGradComponents out;
  const Eigen::Index b_real = real.rows();
  const Eigen::Index b_fake = fake.rows();

  neural::ForwardTrace<float> tr, tf;
  Eigen::MatrixXf y_real = critic.forward(real, &tr);
  Eigen::MatrixXf y_fake = critic.forward(fake, &tf);
  out.wasserstein = y_fake.mean() - y_real.mean();

  // Per-sample grads of -D(x_i) on the real rows; the only sanitized term.
  Eigen::MatrixXf minus_ones = Eigen::MatrixXf::Constant(b_real, 1, -1.0f);
  out.real_rows = critic.per_sample_grads(tr, minus_ones);

  // Fake term: grad of +E[D(fake)].
  Eigen::MatrixXf plus_ones = Eigen::MatrixXf::Constant(b_fake, 1, 1.0f);
  out.fake_grad = critic.param_grads(tf, plus_ones);

  // Gradient penalty on spherical interpolates.
  Eigen::MatrixXf interp = slerp_batch(real, fake, ts);
  Eigen::MatrixXf grads = critic.input_grads(interp);
  Eigen::VectorXf v_scale(grads.rows());
  double penalty = 0.0, norm_sum = 0.0;
  for (Eigen::Index i = 0; i < grads.rows(); ++i) {
    float norm = grads.row(i).norm();
    norm_sum += norm;
    penalty += (norm - 1.0) * (norm - 1.0);
    v_scale[i] = norm < 1e-12f
                     ? 0.0f
                     : static_cast<float>(2.0 * tau * (norm - 1.0) /
                                          (static_cast<double>(grads.rows()) * norm));
  }
  out.penalty = tau * penalty / static_cast<double>(grads.rows());
  out.grad_norm_mean = norm_sum / static_cast<double>(grads.rows());
  Eigen::MatrixXf v = grads.array().colwise() * v_scale.array();
  out.penalty_grad = critic.mixed_input_param_grads(interp, v);
  return out;
}

DLossResult d_loss(const DenseNetF& critic, const Eigen::MatrixXf& real,
                   const Eigen::MatrixXf& fake, const Eigen::VectorXf& ts, double tau) {
  Eigen::MatrixXf y_real = critic.forward(real);
  Eigen::MatrixXf y_fake = critic.forward(fake);
  Eigen::MatrixXf interp = slerp_batch(real, fake, ts);
  Eigen::MatrixXf grads = critic.input_grads(interp);
  DLossResult res;
  res.breakdown.wasserstein = y_fake.mean() - y_real.mean();
  double pen = 0.0, norm_sum = 0.0;
  for (Eigen::Index i = 0; i < grads.rows(); ++i) {
    double norm = grads.row(i).norm();
    norm_sum += norm;
    pen += (norm - 1.0) * (norm - 1.0);
  }
  res.breakdown.penalty = tau * pen / static_cast<double>(grads.rows());
  res.breakdown.grad_norm_mean = norm_sum / static_cast<double>(grads.rows());
  res.loss = res.breakdown.wasserstein + res.breakdown.penalty;
  return res;
}

InfoLossResult info_loss(const Eigen::MatrixXf& f_real, const Eigen::MatrixXf& f_fake) {
  if (f_real.cols() != f_fake.cols()) throw ConfigError("feature width mismatch");
  InfoLossResult res;
  const Eigen::Index b = f_fake.rows();
  const float inv_b = 1.0f / static_cast<float>(b);

  Eigen::VectorXf mean_r = f_real.colwise().mean();
  Eigen::VectorXf mean_f = f_fake.colwise().mean();
  Eigen::VectorXf dmean = mean_r - mean_f;
  float mean_norm = dmean.norm();
  res.mean_term = mean_norm;

  // Population standard deviation per feature.
  auto sd_of = [](const Eigen::MatrixXf& f, const Eigen::VectorXf& mu) {
    Eigen::MatrixXf centered = f.rowwise() - mu.transpose();
    return (centered.array().square().colwise().mean()).sqrt().matrix().transpose().eval();
  };
  Eigen::VectorXf sd_r = sd_of(f_real, mean_r);
  Eigen::VectorXf sd_f = sd_of(f_fake, mean_f);
  Eigen::VectorXf dsd = sd_r - sd_f;
  float sd_norm = dsd.norm();
  res.sd_term = sd_norm;

  res.d_fake = Eigen::MatrixXf::Zero(b, f_fake.cols());
  // d mean_term / d f_fake_ik = -dmean_k / (||dmean|| * B)
  if (mean_norm > 1e-12f) {
    res.d_fake.rowwise() += (-inv_b / mean_norm) * dmean.transpose();
  }
  // d sd_term / d f_fake_ik = -(dsd_k / ||dsd||) * (f_ik - mean_k) / (B * sd_k)
  if (sd_norm > 1e-12f) {
    Eigen::MatrixXf centered = f_fake.rowwise() - mean_f.transpose();
    for (Eigen::Index k = 0; k < f_fake.cols(); ++k) {
      if (sd_f[k] < 1e-12f) continue;
      res.d_fake.col(k) += (-dsd[k] / sd_norm) * centered.col(k) * (inv_b / sd_f[k]);
    }
  }
  return res;
}

namespace {

Eigen::MatrixXf softmax_rows(const Eigen::MatrixXf& logits) {
  Eigen::MatrixXf out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    float mx = logits.row(i).maxCoeff();
    Eigen::ArrayXf e = (logits.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

struct Networks {
  DenseNetF generator;
  DenseNetF critic;
  DenseNetF classifier;  // empty when classification loss is off
  OutputTransform transform;
};

struct FakeBatch {
  Eigen::MatrixXf input;  // noise | condition
  Eigen::MatrixXf raw;
  Eigen::MatrixXf x;  // transformed
  neural::ForwardTrace<float> trace;
  std::vector<tabular::ConditionVector> conditions;
};

class Trainer {
 public:
  Trainer(const DtganConfig& cfg, const Schema& schema, const Table& data, StepCallback on_step)
      : cfg_(cfg),
        schema_(schema),
        on_step_(std::move(on_step)),
        master_(cfg.seed),
        init_rng_(master_.derive(stream::kNetInit)),
        data_rng_(master_.derive(stream::kDataSampling)),
        noise_rng_(master_.derive(stream::kNoise)),
        cond_rng_(master_.derive(stream::kCondition)),
        interp_rng_(master_.derive(stream::kInterpolation)),
        dp_rng_(master_.derive(stream::kDpNoise)),
        shard_rng_(master_.derive(stream::kShards)),
        transform_(schema) {
    cfg_.validate();
    encoded_ = tabular::encode(schema, data);
    n_ = encoded_.rows();
    if (n_ < 1) throw DataError("training data is empty");
    width_ = schema.encoded_width();
    resolve_losses();
    resolve_sigma();
    build_networks();
  }

  TrainedModel run();

 private:
  void resolve_losses() {
    if (cfg_.variant == Variant::dp_discriminator && cfg_.strict_dp) {
      // These losses read real data outside the sanitized mechanism.
      info_on_ = false;
      cls_on_ = false;
    } else {
      info_on_ = cfg_.info_loss;
      cls_on_ = cfg_.classification_loss;
    }
    if (info_on_ && cfg_.disc_hidden.empty() && cfg_.preset == "default") {
      throw ConfigError("information loss needs a critic with at least one hidden layer");
    }
    cond_on_ = cfg_.condition_loss && schema_.condition_width() > 0;
    mechanisms_ = 1 + (info_on_ ? 1 : 0) + (cls_on_ ? 1 : 0);
  }

  long iterations_per_epoch() const { return (n_ + cfg_.batch - 1) / cfg_.batch; }

  long planned_charged_steps() const {
    long iters = cfg_.max_epochs * iterations_per_epoch();
    return cfg_.variant == Variant::dp_discriminator ? iters * cfg_.n_critic : iters;
  }

  void resolve_sigma() {
    if (cfg_.variant == Variant::none) return;
    gamma_ = cfg_.variant == Variant::dp_discriminator
                 ? static_cast<double>(cfg_.batch) / static_cast<double>(n_)
                 : 1.0 / static_cast<double>(cfg_.shards);
    if (cfg_.variant == Variant::dp_discriminator && cfg_.batch > n_) {
      throw ConfigError("batch exceeds dataset size");
    }
    compositions_ = cfg_.variant == Variant::dp_discriminator
                        ? static_cast<long>(cfg_.batch)
                        : static_cast<long>(mechanisms_) * cfg_.batch;
    if (cfg_.sigma <= 0.0) {
      // budget + max_epochs present (validated): calibrate for the plan.
      cfg_.sigma = accountant::calibrate_sigma(*cfg_.budget, planned_charged_steps(),
                                               compositions_, gamma_);
    }
  }

  void build_networks() {
    std::vector<int> gen_hidden = cfg_.gen_hidden;
    std::vector<int> disc_hidden = cfg_.disc_hidden;
    std::vector<int> cls_hidden = cfg_.cls_hidden;
    Activation gen_act = Activation::relu;
    Activation disc_act = Activation::leaky_relu;
    if (cfg_.preset == "baseline") {
      gen_hidden = {4 * width_, 4 * width_};
      disc_hidden = {width_};
      gen_act = Activation::tanh;
      disc_act = Activation::relu;
    }

    auto dims_with = [](int in, const std::vector<int>& hidden, int out) {
      std::vector<int> dims{in};
      dims.insert(dims.end(), hidden.begin(), hidden.end());
      dims.push_back(out);
      return dims;
    };
    auto acts_for = [](size_t hidden, Activation act) {
      std::vector<Activation> acts(hidden, act);
      acts.push_back(Activation::identity);
      return acts;
    };

    int cond_w = schema_.condition_width();
    generator_ = DenseNetF::glorot(dims_with(cfg_.noise_dim + cond_w, gen_hidden, width_),
                                   acts_for(gen_hidden.size(), gen_act),
                                   init_rng_.derive(1));
    critic_ = DenseNetF::glorot(dims_with(width_, disc_hidden, 1),
                                acts_for(disc_hidden.size(), disc_act), init_rng_.derive(2));
    if (cls_on_) {
      target_width_ = schema_.column(schema_.target_index()).encoded_width();
      target_offset_ = schema_.encoded_offset(schema_.target_index());
      classifier_ = DenseNetF::glorot(
          dims_with(width_ - target_width_, cls_hidden, target_width_),
          acts_for(cls_hidden.size(), Activation::relu), init_rng_.derive(3));
    }
  }

  Eigen::MatrixXf rows_at(const std::vector<size_t>& idx) const {
    Eigen::MatrixXf out(static_cast<Eigen::Index>(idx.size()), width_);
    for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encoded_.row(static_cast<Eigen::Index>(idx[i]));
    return out;
  }

  Eigen::MatrixXf draw_batch(const std::vector<size_t>& pool, int batch) {
    size_t b = std::min<size_t>(batch, pool.size());
    std::vector<size_t> picked = data_rng_.sample_without_replacement(pool.size(), b);
    std::vector<size_t> idx;
    idx.reserve(b);
    for (size_t p : picked) idx.push_back(pool[p]);
    return rows_at(idx);
  }

  FakeBatch make_fake(int batch, bool with_trace) {
    FakeBatch fb;
    int cond_w = schema_.condition_width();
    fb.input.resize(batch, cfg_.noise_dim + cond_w);
    fb.conditions.reserve(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      for (int d = 0; d < cfg_.noise_dim; ++d) {
        fb.input(i, d) = static_cast<float>(noise_rng_.normal());
      }
      tabular::ConditionVector cond = tabular::sample_condition(schema_, cond_rng_);
      if (cond_w > 0) fb.input.row(i).tail(cond_w) = cond.dense.transpose();
      fb.conditions.push_back(std::move(cond));
    }
    fb.raw = generator_.forward(fb.input, with_trace ? &fb.trace : nullptr);
    fb.x = transform_.forward(fb.raw);
    return fb;
  }

  LossBreakdown d_step(const Eigen::MatrixXf& real, bool sanitize_real) {
    FakeBatch fb = make_fake(static_cast<int>(real.rows()), false);
    Eigen::VectorXf ts(real.rows());
    for (Eigen::Index i = 0; i < ts.size(); ++i) ts[i] = static_cast<float>(interp_rng_.uniform());
    DiscGradComponents comps = d_grad_components(critic_, real, fb.x, ts, cfg_.tau);

    Eigen::VectorXf real_term;
    if (sanitize_real) {
      sanitizer::SanitizeConfig scfg{kClipBound, static_cast<float>(cfg_.sigma), 0};
      real_term = sanitizer::sanitize(comps.real_rows, scfg, dp_rng_);
    } else {
      real_term = comps.real_rows.colwise().mean().transpose();
    }
    Eigen::VectorXf grad = real_term + comps.fake_grad + comps.penalty_grad;
    neural::adam_step(*critic_adam_, critic_, grad);

    LossBreakdown b;
    b.wasserstein = comps.wasserstein;
    b.penalty = comps.penalty;
    b.grad_norm_mean = comps.grad_norm_mean;
    return b;
  }

  void classifier_step(const Eigen::MatrixXf& real) {
    Eigen::MatrixXf input = drop_target(real);
    Eigen::MatrixXf labels = real.middleCols(target_offset_, target_width_);
    neural::ForwardTrace<float> tc;
    Eigen::MatrixXf logits = classifier_.forward(input, &tc);
    Eigen::MatrixXf p = softmax_rows(logits);
    neural::adam_step(*classifier_adam_, classifier_, classifier_.param_grads(tc, p - labels));
  }

  Eigen::MatrixXf drop_target(const Eigen::MatrixXf& x) const {
    Eigen::MatrixXf out(x.rows(), width_ - target_width_);
    out.leftCols(target_offset_) = x.leftCols(target_offset_);
    out.rightCols(width_ - target_offset_ - target_width_) =
        x.rightCols(width_ - target_offset_ - target_width_);
    return out;
  }

  GeneratorGradSignals generator_signals(FakeBatch& fb, const Eigen::MatrixXf& real_stats) {
    GeneratorGradSignals sig;
    const Eigen::Index b = fb.x.rows();
    const float fb_count = static_cast<float>(b);

    // Adversarial: -E[D(G(z))].
    neural::ForwardTrace<float> td;
    Eigen::MatrixXf y = critic_.forward(fb.x, &td);
    sig.losses.adversarial = -y.mean();
    Eigen::MatrixXf seed = Eigen::MatrixXf::Constant(b, 1, -1.0f / fb_count);
    Eigen::MatrixXf dx = critic_.input_grads_from_output(td, seed);
    sig.dy_adversarial = transform_.backward(fb.x, dx) * fb_count;

    if (info_on_) {
      neural::ForwardTrace<float> tr;
      critic_.forward(real_stats, &tr);
      InfoLossResult il = info_loss(tr.penultimate(), td.penultimate());
      sig.losses.info_mean = il.mean_term;
      sig.losses.info_sd = il.sd_term;
      Eigen::MatrixXf dxi =
          critic_.backward_from_layer(td, critic_.layer_count() - 2, il.d_fake);
      sig.dy_info = transform_.backward(fb.x, dxi) * fb_count;
    }

    if (cls_on_) {
      Eigen::MatrixXf input = drop_target(fb.x);
      Eigen::MatrixXf labels = fb.x.middleCols(target_offset_, target_width_);
      neural::ForwardTrace<float> tc;
      Eigen::MatrixXf p = softmax_rows(classifier_.forward(input, &tc));
      double ce = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) {
        for (int k = 0; k < target_width_; ++k) {
          ce -= labels(i, k) * std::log(std::max(p(i, k), 1e-12f));
        }
      }
      sig.losses.classification = ce / fb_count;
      // Path through the classifier input.
      Eigen::MatrixXf dz = (p - labels) / fb_count;
      Eigen::MatrixXf dinput = classifier_.input_grads_from_output(tc, dz);
      Eigen::MatrixXf dx_full = Eigen::MatrixXf::Zero(b, width_);
      dx_full.leftCols(target_offset_) = dinput.leftCols(target_offset_);
      dx_full.rightCols(width_ - target_offset_ - target_width_) =
          dinput.rightCols(width_ - target_offset_ - target_width_);
      // Path through the generated label distribution.
      for (Eigen::Index i = 0; i < b; ++i) {
        for (int k = 0; k < target_width_; ++k) {
          dx_full(i, target_offset_ + k) -= std::log(std::max(p(i, k), 1e-12f)) / fb_count;
        }
      }
      sig.dy_classification = transform_.backward(fb.x, dx_full) * fb_count;
    }

    if (cond_on_) {
      // Softmax cross-entropy against the conditioned category, directly in
      // raw space for the conditioned block only.
      Eigen::MatrixXf draw = Eigen::MatrixXf::Zero(b, width_);
      double ce = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto& cond = fb.conditions[static_cast<size_t>(i)];
        if (cond.column < 0) continue;
        int off = schema_.encoded_offset(static_cast<size_t>(cond.column));
        int w = schema_.column(static_cast<size_t>(cond.column)).encoded_width();
        ce -= std::log(std::max(fb.x(i, off + cond.category), 1e-12f));
        for (int k = 0; k < w; ++k) {
          draw(i, off + k) = (fb.x(i, off + k) - (k == cond.category ? 1.0f : 0.0f)) / fb_count;
        }
      }
      sig.losses.condition = ce / fb_count;
      sig.dy_condition = draw * fb_count;
    }
    return sig;
  }

  LossBreakdown g_step(const Eigen::MatrixXf& real_stats, bool sanitize_losses) {
    FakeBatch fb = make_fake(cfg_.batch, true);
    GeneratorGradSignals sig = generator_signals(fb, real_stats);

    Eigen::VectorXf grad;
    if (sanitize_losses) {
      sanitizer::SanitizeConfig scfg{kClipBound, static_cast<float>(cfg_.sigma), 0};
      grad = sanitizer::sanitize(generator_.per_sample_grads(fb.trace, sig.dy_adversarial), scfg,
                                 dp_rng_);
      if (info_on_) {
        grad += sanitizer::sanitize(generator_.per_sample_grads(fb.trace, sig.dy_info), scfg,
                                    dp_rng_);
      }
      if (cls_on_) {
        grad += sanitizer::sanitize(generator_.per_sample_grads(fb.trace, sig.dy_classification),
                                    scfg, dp_rng_);
      }
      if (cond_on_) grad += generator_.param_grads(fb.trace, sig.dy_condition);
    } else {
      Eigen::MatrixXf dy = sig.dy_adversarial;
      if (info_on_) dy += sig.dy_info;
      if (cls_on_) dy += sig.dy_classification;
      if (cond_on_) dy += sig.dy_condition;
      grad = generator_.param_grads(fb.trace, dy);
    }
    neural::adam_step(*generator_adam_, generator_, grad);
    return sig.losses;
  }

  DtganConfig cfg_;
  const Schema& schema_;
  StepCallback on_step_;
  Rng master_, init_rng_, data_rng_, noise_rng_, cond_rng_, interp_rng_, dp_rng_, shard_rng_;
  OutputTransform transform_;
  Eigen::MatrixXf encoded_;
  long n_ = 0;
  int width_ = 0;
  int target_offset_ = 0;
  int target_width_ = 0;
  bool info_on_ = false, cls_on_ = false, cond_on_ = false;
  int mechanisms_ = 1;
  double gamma_ = 0.0;
  long compositions_ = 0;
  DenseNetF generator_, critic_, classifier_;
  std::optional<neural::AdamState<float>> generator_adam_, critic_adam_, classifier_adam_;
};

TrainedModel Trainer::run() {
  generator_adam_.emplace(generator_.param_count(), cfg_.lr);
  critic_adam_.emplace(critic_.param_count(), cfg_.lr);
  generator_adam_->beta1 = critic_adam_->beta1 = cfg_.beta1;
  generator_adam_->beta2 = critic_adam_->beta2 = cfg_.beta2;
  if (cls_on_) {
    classifier_adam_.emplace(classifier_.param_count(), cfg_.lr);
    classifier_adam_->beta1 = cfg_.beta1;
    classifier_adam_->beta2 = cfg_.beta2;
  }

  const bool dp_d = cfg_.variant == Variant::dp_discriminator;
  const bool dp_g = cfg_.variant == Variant::dp_generator;
  std::optional<accountant::Ledger> ledger;
  if (dp_d || dp_g) {
    double delta = cfg_.budget ? cfg_.budget->delta : 1e-5;
    ledger.emplace(accountant::MechanismSpec{cfg_.sigma, 2.0, compositions_, gamma_}, delta);
  }

  // Disjoint equal-size shards for the DP generator; remainder rows are
  // dropped to keep sizes equal.
  std::vector<std::vector<size_t>> shards;
  std::vector<size_t> all_rows(static_cast<size_t>(n_));
  for (size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = i;
  if (dp_g) {
    if (cfg_.shards > n_) throw ConfigError("more shards than data rows");
    std::vector<size_t> perm = all_rows;
    shard_rng_.shuffle(perm.begin(), perm.end());
    size_t shard_size = static_cast<size_t>(n_) / static_cast<size_t>(cfg_.shards);
    if (shard_size < static_cast<size_t>(cfg_.batch)) {
      std::cerr << "warning: shard size " << shard_size << " is below the batch size; critic "
                   "batches are clamped to the shard size\n";
    }
    for (int s = 0; s < cfg_.shards; ++s) {
      shards.emplace_back(perm.begin() + static_cast<long>(s * shard_size),
                          perm.begin() + static_cast<long>((s + 1) * shard_size));
    }
    // One critic per shard, trained only on its shard.
  }
  std::vector<DenseNetF> shard_critics;
  std::vector<neural::AdamState<float>> shard_adams;
  if (dp_g) {
    for (int s = 0; s < cfg_.shards; ++s) {
      if (s == 0) {
        shard_critics.push_back(critic_);
      } else {
        shard_critics.push_back(DenseNetF::glorot(
            std::vector<int>(critic_.dims()), std::vector<Activation>(critic_.activations()),
            init_rng_.derive(100 + static_cast<uint64_t>(s))));
      }
      shard_adams.emplace_back(critic_.param_count(), cfg_.lr);
      shard_adams.back().beta1 = cfg_.beta1;
      shard_adams.back().beta2 = cfg_.beta2;
    }
  }

  const long iters_per_epoch = iterations_per_epoch();
  const long max_iters =
      cfg_.max_epochs > 0 ? cfg_.max_epochs * iters_per_epoch : std::numeric_limits<long>::max();
  const double eps_target = cfg_.budget ? cfg_.budget->epsilon
                                        : std::numeric_limits<double>::infinity();

  std::vector<StepRecord> history;
  std::string stop_reason = "max_epochs";
  long iter = 0;
  bool out_of_budget = false;

  while (iter < max_iters) {
    LossBreakdown d_stats;
    Eigen::MatrixXf last_real;

    if (dp_d) {
      bool halted = false;
      for (int c = 0; c < cfg_.n_critic; ++c) {
        if (ledger->peek_next_epsilon() > eps_target) {
          halted = true;
          break;
        }
        last_real = draw_batch(all_rows, cfg_.batch);
        d_stats = d_step(last_real, /*sanitize_real=*/true);
        ledger->spend();
      }
      if (halted) {
        out_of_budget = true;
        stop_reason = "budget";
        break;
      }
      if (cls_on_) classifier_step(last_real);
      LossBreakdown g_stats = g_step(info_on_ ? last_real : Eigen::MatrixXf(), false);
      g_stats.wasserstein = d_stats.wasserstein;
      g_stats.penalty = d_stats.penalty;
      g_stats.grad_norm_mean = d_stats.grad_norm_mean;
      ++iter;
      StepRecord rec{iter, ledger->steps(), g_stats, ledger->epsilon()};
      history.push_back(rec);
      if (on_step_) on_step_(rec);
      continue;
    }

    if (dp_g) {
      size_t shard = shard_rng_.uniform_int(shards.size());
      critic_ = shard_critics[shard];
      critic_adam_.emplace(shard_adams[shard]);
      for (int c = 0; c < cfg_.n_critic; ++c) {
        Eigen::MatrixXf real = draw_batch(shards[shard], cfg_.batch);
        d_stats = d_step(real, /*sanitize_real=*/false);
      }
      shard_critics[shard] = critic_;
      shard_adams[shard] = *critic_adam_;
      if (cls_on_) classifier_step(draw_batch(shards[shard], cfg_.batch));
      if (ledger->peek_next_epsilon() > eps_target) {
        out_of_budget = true;
        stop_reason = "budget";
        break;
      }
      Eigen::MatrixXf stats = info_on_ ? draw_batch(shards[shard], cfg_.batch) : Eigen::MatrixXf();
      LossBreakdown g_stats = g_step(stats, /*sanitize_losses=*/true);
      ledger->spend();
      g_stats.wasserstein = d_stats.wasserstein;
      g_stats.penalty = d_stats.penalty;
      g_stats.grad_norm_mean = d_stats.grad_norm_mean;
      ++iter;
      StepRecord rec{iter, ledger->steps(), g_stats, ledger->epsilon()};
      history.push_back(rec);
      if (on_step_) on_step_(rec);
      continue;
    }

    // Non-private variant.
    for (int c = 0; c < cfg_.n_critic; ++c) {
      last_real = draw_batch(all_rows, cfg_.batch);
      d_stats = d_step(last_real, /*sanitize_real=*/false);
    }
    if (cls_on_) classifier_step(draw_batch(all_rows, cfg_.batch));
    Eigen::MatrixXf stats = info_on_ ? draw_batch(all_rows, cfg_.batch) : Eigen::MatrixXf();
    LossBreakdown g_stats = g_step(stats, false);
    g_stats.wasserstein = d_stats.wasserstein;
    g_stats.penalty = d_stats.penalty;
    g_stats.grad_norm_mean = d_stats.grad_norm_mean;
    ++iter;
    StepRecord rec{iter, 0, g_stats, std::numeric_limits<double>::infinity()};
    history.push_back(rec);
    if (on_step_) on_step_(rec);
  }

  accountant::Transcript transcript;
  transcript.variant = variant_name(cfg_.variant);
  transcript.batch = cfg_.batch;
  if (ledger) {
    transcript.steps = ledger->steps();
    transcript.sigma = cfg_.sigma;
    transcript.gamma = gamma_;
    transcript.compositions = compositions_;
    transcript.delta = ledger->delta();
    accountant::DpResult dp = ledger->dp();
    transcript.epsilon = dp.epsilon;
    transcript.best_order = dp.best_order;
    accountant::RdpCurve total = ledger->total_curve();
    transcript.orders = total.grid.orders();
    transcript.rdp = total.eps;
  } else {
    transcript.epsilon = std::numeric_limits<double>::infinity();
  }

  if (out_of_budget && iter == 0) {
    throw BudgetError("privacy budget exhausted before the first generator step; ledger: " +
                      transcript.to_json());
  }
  if (cfg_.budget && ledger && transcript.epsilon > cfg_.budget->epsilon) {
    throw std::logic_error("ledger overshot the budget");
  }

  TrainedModel model{std::move(generator_), schema_, std::move(transcript), cfg_.to_json(),
                     cfg_.noise_dim, stop_reason, std::move(history)};
  return model;
}

}  // namespace

TrainedModel train_dtgan(const DtganConfig& config, const Schema& schema, const Table& data,
                         const StepCallback& on_step) {
  Trainer trainer(config, schema, data, on_step);
  return trainer.run();
}

TrainedModel train_dtgan_d(const DtganConfig& config, const Schema& schema, const Table& data,
                           const StepCallback& on_step) {
  if (config.variant != Variant::dp_discriminator) {
    throw ConfigError("train_dtgan_d requires variant dp_discriminator");
  }
  return train_dtgan(config, schema, data, on_step);
}

TrainedModel train_dtgan_g(const DtganConfig& config, const Schema& schema, const Table& data,
                           const StepCallback& on_step) {
  if (config.variant != Variant::dp_generator) {
    throw ConfigError("train_dtgan_g requires variant dp_generator");
  }
  return train_dtgan(config, schema, data, on_step);
}

tabular::Table sample(const TrainedModel& model, long n, Rng rng) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  Rng noise_rng = rng.derive(stream::kNoise);
  Rng cond_rng = rng.derive(stream::kCondition);
  OutputTransform transform(model.schema);
  int cond_w = model.schema.condition_width();

  tabular::EncodedMatrix all(n, model.schema.encoded_width());
  long done = 0;
  while (done < n) {
    long b = std::min<long>(512, n - done);
    Eigen::MatrixXf input(b, model.noise_dim + cond_w);
    for (long i = 0; i < b; ++i) {
      for (int d = 0; d < model.noise_dim; ++d) {
        input(i, d) = static_cast<float>(noise_rng.normal());
      }
      if (cond_w > 0) {
        tabular::ConditionVector cond = tabular::sample_condition(model.schema, cond_rng);
        input.row(i).tail(cond_w) = cond.dense.transpose();
      }
    }
    all.middleRows(done, b) = transform.forward(model.generator.forward(input));
    done += b;
  }
  return tabular::decode(model.schema, all);
}

tabular::Table sample(const TrainedModel& model, long n, uint64_t seed) {
  return sample(model, n, Rng(seed).derive(stream::kSampling));
}

namespace {
constexpr char kCheckpointMagic[4] = {'D', 'T', 'G', 'C'};
}

void save_model(const TrainedModel& model, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["config"] = nlohmann::json::parse(model.config_json);
  header["schema"] = nlohmann::json::parse(model.schema.to_json());
  header["transcript"] = nlohmann::json::parse(model.transcript.to_json());
  header["noise_dim"] = model.noise_dim;
  header["stop_reason"] = model.stop_reason;
  std::string header_str = header.dump();

  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, 4);
  uint32_t version = 1;
  char vb[4] = {static_cast<char>(version), static_cast<char>(version >> 8),
                static_cast<char>(version >> 16), static_cast<char>(version >> 24)};
  out.write(vb, 4);
  uint64_t len = header_str.size();
  char lb[8];
  for (int i = 0; i < 8; ++i) lb[i] = static_cast<char>(len >> (8 * i));
  out.write(lb, 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  model.generator.save(out);
  atomic_write_file(path, out.str());
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("bad checkpoint magic");
  }
  unsigned char vb[4];
  in.read(reinterpret_cast<char*>(vb), 4);
  unsigned char lb[8];
  in.read(reinterpret_cast<char*>(lb), 8);
  if (!in) throw DataError("truncated checkpoint");
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(lb[i]) << (8 * i);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint header");
  nlohmann::json header = nlohmann::json::parse(header_str);

  TrainedModel model;
  model.config_json = header.at("config").dump(2);
  model.schema = tabular::Schema::from_json(header.at("schema").dump());
  model.transcript = accountant::Transcript::from_json(header.at("transcript").dump());
  model.noise_dim = header.at("noise_dim").get<int>();
  model.stop_reason = header.at("stop_reason").get<std::string>();
  model.generator = DenseNetF::load(in);
  return model;
}

}  // namespace dtgan::gan
