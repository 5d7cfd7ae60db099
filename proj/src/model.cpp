#include "cdrnp/model.hpp"

#include <array>
#include <string>

namespace cdrnp {

void ModelDims::validate() const {
  if (n_union_users <= 0 || n_src_items <= 0 || n_tgt_items <= 0) {
    throw ContractError("model dims: user/item counts must be positive");
  }
  if (d <= 0 || hidden <= 0 || depth <= 0) {
    throw ContractError("model dims: d, hidden and depth must be positive");
  }
}

namespace {

// Init scale for the FiLM gate projections; everything else uses 0.1. At
// 0.1 the tanh gates open too slowly to modulate anything within a
// desk-scale training budget.
constexpr double kFilmGateInitStd = 4.0;

Tensor gaussian_init(Rng& rng, std::vector<std::int64_t> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

Parameter weight(Rng& rng, const std::string& name, std::int64_t rows, std::int64_t cols) {
  return Parameter(name, gaussian_init(rng, {rows, cols}, 0.1));
}

Parameter weight_vec(Rng& rng, const std::string& name, std::int64_t n) {
  return Parameter(name, gaussian_init(rng, {n}, 0.1));
}

Parameter bias(const std::string& name, std::int64_t n) {
  return Parameter(name, Tensor::zeros({n}));
}

MlpParams make_mlp(Rng& rng, const std::string& prefix, std::int64_t in, std::int64_t hidden,
                   std::int64_t out) {
  MlpParams mlp;
  mlp.w1 = weight(rng, prefix + "_w1", hidden, in);
  mlp.b1 = bias(prefix + "_b1", hidden);
  mlp.w2 = weight(rng, prefix + "_w2", hidden, hidden);
  mlp.b2 = bias(prefix + "_b2", hidden);
  mlp.w3 = weight(rng, prefix + "_w3", out, hidden);
  mlp.b3 = bias(prefix + "_b3", out);
  return mlp;
}

// ReLU hidden layers, linear output.
ad::NodeId mlp3(ad::Tape& tape, MlpParams& mlp, ad::NodeId in) {
  ad::NodeId h1 = tape.relu(tape.affine(tape.param(mlp.w1), in, tape.param(mlp.b1)));
  ad::NodeId h2 = tape.relu(tape.affine(tape.param(mlp.w2), h1, tape.param(mlp.b2)));
  return tape.affine(tape.param(mlp.w3), h2, tape.param(mlp.b3));
}

}  // namespace

ModelParams::ModelParams(const ModelDims& dims_in, std::uint64_t init_seed) : dims(dims_in) {
  dims.validate();
  Rng rng(derive_seed(init_seed, /*tag=*/0x1217));
  const std::int64_t d = dims.d;
  const std::int64_t d2 = dims.d2();
  const std::int64_t dx = dims.dx();
  const std::int64_t hidden = dims.hidden;

  user_emb = weight(rng, "user_emb", dims.n_union_users, d);
  src_item_emb = weight(rng, "src_item_emb", dims.n_src_items, d2);
  tgt_item_emb = weight(rng, "tgt_item_emb", dims.n_tgt_items, d2);
  attn_q = weight_vec(rng, "attn_q", d);
  attn_w = weight(rng, "attn_w", d, d2);
  encoder = make_mlp(rng, "enc", dx + 1, hidden, d);
  remainer = make_mlp(rng, "rem", dx + 1, hidden, d);
  head_r = weight(rng, "head_r", d, d);
  head_mu = weight(rng, "head_mu", d, d);
  head_sigma = weight(rng, "head_sigma", d, d);

  decoder.reserve(static_cast<std::size_t>(dims.depth));
  for (int l = 0; l < dims.depth; ++l) {
    const std::int64_t in = (l == 0) ? dx + d : hidden;
    const std::string p = "dec" + std::to_string(l);
    DecoderLayer layer;
    layer.w = weight(rng, p + "_w", hidden, in);
    layer.b = bias(p + "_b", hidden);
    // Wider init than the rest: tanh gates at N(0, 0.1^2) start near zero
    // and gate the whole decoder shut (see FILM_GATE_INIT experiments).
    layer.w_gamma = Parameter(p + "_wgamma", gaussian_init(rng, {hidden, d}, kFilmGateInitStd));
    layer.w_beta = Parameter(p + "_wbeta", gaussian_init(rng, {hidden, d}, kFilmGateInitStd));
    decoder.push_back(std::move(layer));
  }
  out_w = weight(rng, "out_w", 1, hidden);
  out_b = bias("out_b", 1);

  aux_w1 = weight(rng, "aux_w1", hidden, 2 * d);
  aux_b1 = bias("aux_b1", hidden);
  aux_w2 = weight(rng, "aux_w2", 1, hidden);
  aux_b2 = bias("aux_b2", 1);
}

std::vector<Parameter*> ModelParams::all() {
  std::vector<Parameter*> out = {
      &user_emb, &src_item_emb, &tgt_item_emb, &attn_q, &attn_w,
      &encoder.w1, &encoder.b1, &encoder.w2, &encoder.b2, &encoder.w3, &encoder.b3,
      &remainer.w1, &remainer.b1, &remainer.w2, &remainer.b2, &remainer.w3, &remainer.b3,
      &head_r, &head_mu, &head_sigma,
  };
  for (auto& layer : decoder) {
    out.push_back(&layer.w);
    out.push_back(&layer.b);
    out.push_back(&layer.w_gamma);
    out.push_back(&layer.w_beta);
  }
  out.push_back(&out_w);
  out.push_back(&out_b);
  out.push_back(&aux_w1);
  out.push_back(&aux_b1);
  out.push_back(&aux_w2);
  out.push_back(&aux_b2);
  return out;
}

void ModelParams::zero_grads() {
  for (Parameter* p : all()) p->zero_grad();
}

std::uint64_t ModelParams::value_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (Parameter* p : const_cast<ModelParams*>(this)->all()) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data.data(), p->value.data.size() * sizeof(double));
  }
  return h;
}

ad::NodeId attention_weights(ad::Tape& tape, ModelParams& params,
                             std::span<const std::int32_t> history_items) {
  if (history_items.empty()) throw ContractError("attention_weights: empty history");
  const ad::NodeId q = tape.param(params.attn_q);
  const ad::NodeId wa = tape.param(params.attn_w);
  std::vector<ad::NodeId> scores;
  scores.reserve(history_items.size());
  for (std::int32_t item : history_items) {
    const ad::NodeId v = tape.row(params.src_item_emb, item);
    scores.push_back(tape.dot(q, tape.relu(tape.linear(wa, v))));
  }
  return tape.softmax(tape.concat(scores));
}

ad::NodeId embed_characteristic(ad::Tape& tape, ModelParams& params,
                                const UnionUserIndex& users, const RatingExample& example,
                                bool ablate_acp) {
  if (example.history.empty()) throw ContractError("embed_characteristic: empty history");

  std::vector<ad::NodeId> hist;
  hist.reserve(example.history.size());
  for (std::int32_t item : example.history) hist.push_back(tape.row(params.src_item_emb, item));

  ad::NodeId pooled;  // c_{u_j}, d^2
  if (ablate_acp) {
    pooled = tape.mean(hist);
  } else {
    const ad::NodeId weights = attention_weights(tape, params, example.history);
    pooled = tape.weighted_sum(hist, weights);
  }

  if (example.user < 0 ||
      static_cast<std::size_t>(example.user) >= users.src_to_union.size()) {
    throw LookupError("embed_characteristic: source user index " +
                      std::to_string(example.user) + " out of range");
  }
  const std::int32_t union_row = users.src_to_union[static_cast<std::size_t>(example.user)];
  const ad::NodeId u = tape.row(params.user_emb, union_row);

  // The pooled history acts as a user-specific projection matrix.
  const ad::NodeId proj = tape.reshape(pooled, {params.dims.d, params.dims.d});
  const ad::NodeId u_hat = tape.linear(proj, u);

  const ad::NodeId v_t = tape.row(params.tgt_item_emb, example.candidate_item);
  const std::array<ad::NodeId, 2> parts = {u_hat, v_t};
  return tape.concat(parts);
}

namespace {

std::vector<ad::NodeId> encode_pairs(ad::Tape& tape, MlpParams& mlp,
                                     std::span<const EncodedPair> pairs) {
  std::vector<ad::NodeId> encoded;
  encoded.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const ad::NodeId y = tape.constant(Tensor::scalar(pair.y));
    const std::array<ad::NodeId, 2> parts = {pair.x, y};
    encoded.push_back(mlp3(tape, mlp, tape.concat(parts)));
  }
  return encoded;
}

}  // namespace

LatentNodes encode_latent(ad::Tape& tape, ModelParams& params,
                          std::span<const EncodedPair> pairs) {
  if (pairs.empty()) throw ContractError("encode_latent: empty pair list");
  const auto encoded = encode_pairs(tape, params.encoder, pairs);
  const ad::NodeId r_bar = tape.mean(encoded);
  const ad::NodeId r_hat = tape.relu(tape.linear(tape.param(params.head_r), r_bar));
  LatentNodes latent;
  latent.mu = tape.linear(tape.param(params.head_mu), r_hat);
  latent.log_sigma = tape.clamp(tape.linear(tape.param(params.head_sigma), r_hat),
                                -kLogSigmaClamp, kLogSigmaClamp);
  return latent;
}

ad::NodeId encode_remainer(ad::Tape& tape, ModelParams& params,
                           std::span<const EncodedPair> pairs) {
  if (pairs.empty()) throw ContractError("encode_remainer: empty support set");
  const auto encoded = encode_pairs(tape, params.remainer, pairs);
  return tape.mean(encoded);
}

LatentSample sample_latent(ad::Tape& tape, const LatentNodes& latent, Rng* rng,
                           LatentMode mode, const Tensor* frozen_epsilon) {
  const std::int64_t d = tape.value(latent.mu).size();
  LatentSample out;
  if (mode == LatentMode::kMean) {
    out.z = latent.mu;
    out.epsilon = Tensor::zeros({d});
    return out;
  }
  if (frozen_epsilon != nullptr) {
    if (frozen_epsilon->size() != d) {
      throw ShapeError("sample_latent: frozen epsilon has wrong length");
    }
    out.epsilon = *frozen_epsilon;
  } else {
    if (rng == nullptr) throw ContractError("sample_latent: sample mode needs an rng");
    out.epsilon = Tensor::zeros({d});
    for (double& v : out.epsilon.data) v = rng->normal();
  }
  const ad::NodeId sigma = tape.exp_(latent.log_sigma);
  const ad::NodeId noise = tape.mul(tape.constant(out.epsilon), sigma);
  out.z = tape.add(latent.mu, noise);
  return out;
}

FilmNodes film_coefficients(ad::Tape& tape, ModelParams& params, ad::NodeId h) {
  FilmNodes film;
  film.gamma.reserve(params.decoder.size());
  film.beta.reserve(params.decoder.size());
  for (auto& layer : params.decoder) {
    film.gamma.push_back(tape.tanh_(tape.linear(tape.param(layer.w_gamma), h)));
    film.beta.push_back(tape.tanh_(tape.linear(tape.param(layer.w_beta), h)));
  }
  return film;
}

ad::NodeId decode_rating(ad::Tape& tape, ModelParams& params, ad::NodeId x, ad::NodeId z,
                         const FilmNodes* film) {
  const std::array<ad::NodeId, 2> parts = {x, z};
  ad::NodeId g = tape.concat(parts);
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    auto& layer = params.decoder[l];
    ad::NodeId pre = tape.affine(tape.param(layer.w), g, tape.param(layer.b));
    if (film != nullptr) {
      pre = tape.add(tape.mul(film->gamma[l], pre), film->beta[l]);
    }
    g = tape.relu(pre);
  }
  return tape.affine(tape.param(params.out_w), g, tape.param(params.out_b));
}

ad::NodeId decode_rating(ad::Tape& tape, ModelParams& params, ad::NodeId x, ad::NodeId z,
                         ad::NodeId h, bool ablate_prm) {
  if (ablate_prm) return decode_rating(tape, params, x, z, nullptr);
  const FilmNodes film = film_coefficients(tape, params, h);
  return decode_rating(tape, params, x, z, &film);
}

TaskLatents ForwardResult::latents(const ad::Tape& tape) const {
  TaskLatents out;
  out.prior.mu = tape.value(prior.mu);
  out.prior.log_sigma = tape.value(prior.log_sigma);
  if (posterior) {
    out.posterior = GaussianLatent{tape.value(posterior->mu), tape.value(posterior->log_sigma)};
  }
  out.z = tape.value(z);
  if (h >= 0) out.h = tape.value(h);
  out.epsilon = epsilon;
  return out;
}

ForwardResult forward_task(ad::Tape& tape, ModelParams& params, const UnionUserIndex& users,
                           const Task& task, Phase phase, Rng* rng,
                           const AblationFlags& ablations, LatentMode test_mode,
                           const Tensor* frozen_epsilon) {
  if (task.phase != phase) throw ContractError("forward_task: phase mismatch");
  if (task.support.empty()) throw ContractError("forward_task: empty support set");
  if (task.query.empty()) throw ContractError("forward_task: empty query set");

  std::vector<EncodedPair> support_pairs;
  support_pairs.reserve(task.support.size());
  for (const auto& ex : task.support) {
    if (!ex.rating.has_value()) {
      throw ContractError("forward_task: support example without a rating");
    }
    support_pairs.push_back(
        {embed_characteristic(tape, params, users, ex, ablations.no_acp), *ex.rating});
  }

  ForwardResult result;
  result.prior = encode_latent(tape, params, support_pairs);

  // Query inputs are built from (user, history, candidate) only; the
  // rating field is read exclusively on the training path below.
  std::vector<ad::NodeId> query_x;
  query_x.reserve(task.query.size());
  for (const auto& ex : task.query) {
    query_x.push_back(embed_characteristic(tape, params, users, ex, ablations.no_acp));
  }

  LatentSample sample;
  if (phase == Phase::kTraining) {
    std::vector<EncodedPair> query_pairs;
    query_pairs.reserve(task.query.size());
    for (std::size_t i = 0; i < task.query.size(); ++i) {
      if (!task.query[i].rating.has_value()) {
        throw ContractError("forward_task: training query example without a rating");
      }
      query_pairs.push_back({query_x[i], *task.query[i].rating});
    }
    result.posterior = encode_latent(tape, params, query_pairs);
    sample = sample_latent(tape, *result.posterior, rng, LatentMode::kSample, frozen_epsilon);
  } else {
    sample = sample_latent(tape, result.prior, rng, test_mode, frozen_epsilon);
  }
  result.z = sample.z;
  result.epsilon = std::move(sample.epsilon);

  FilmNodes film;
  const FilmNodes* film_ptr = nullptr;
  if (!ablations.no_prm) {
    result.h = encode_remainer(tape, params, support_pairs);
    film = film_coefficients(tape, params, result.h);
    film_ptr = &film;
  }

  result.predictions.reserve(query_x.size());
  for (ad::NodeId x : query_x) {
    result.predictions.push_back(decode_rating(tape, params, x, result.z, film_ptr));
  }
  return result;
}

}  // namespace cdrnp
