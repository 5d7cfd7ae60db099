#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cdrnp/data.hpp"
#include "cdrnp/rng.hpp"
#include "cdrnp/tape.hpp"
#include "cdrnp/task.hpp"

namespace cdrnp {

// log sigma is clamped to +-kLogSigmaClamp before exponentiation.
inline constexpr double kLogSigmaClamp = 10.0;

struct ModelDims {
  std::int32_t n_union_users = 0;
  std::int32_t n_src_items = 0;
  std::int32_t n_tgt_items = 0;
  int d = 8;       // user embedding width; item embeddings are d^2
  int hidden = 64; // MLP width
  int depth = 3;   // decoder layers

  int d2() const { return d * d; }
  int dx() const { return d + d * d; }  // characteristic vector width

  void validate() const;
};

struct AblationFlags {
  bool no_prm = false;  // bypass FiLM modulation (plain MLP decoder)
  bool no_acp = false;  // uniform mean pooling instead of attention
};

enum class LatentMode { kMean, kSample };

// Diagonal Gaussian over the task latent, as plain values.
struct GaussianLatent {
  Tensor mu;
  Tensor log_sigma;
};

// The same Gaussian while still on the tape.
struct LatentNodes {
  ad::NodeId mu = -1;
  ad::NodeId log_sigma = -1;
};

struct MlpParams {
  Parameter w1, b1, w2, b2, w3, b3;
};

struct DecoderLayer {
  Parameter w, b;
  Parameter w_gamma, w_beta;
};

// Every trainable tensor of the network, plus the auxiliary source-domain
// regression head that keeps cold-start user embeddings trained.
class ModelParams {
 public:
  ModelParams(const ModelDims& dims, std::uint64_t init_seed);

  ModelDims dims;

  Parameter user_emb;      // n_union_users x d
  Parameter src_item_emb;  // n_src_items x d^2
  Parameter tgt_item_emb;  // n_tgt_items x d^2
  Parameter attn_q;        // d
  Parameter attn_w;        // d x d^2
  MlpParams encoder;       // dx+1 -> hidden -> hidden -> d
  MlpParams remainer;      // dx+1 -> hidden -> hidden -> d
  Parameter head_r;        // d x d
  Parameter head_mu;       // d x d
  Parameter head_sigma;    // d x d
  std::vector<DecoderLayer> decoder;  // layer 0 input dx+d, then hidden
  Parameter out_w;         // 1 x hidden
  Parameter out_b;         // 1
  Parameter aux_w1;        // hidden x 2d
  Parameter aux_b1;        // hidden
  Parameter aux_w2;        // 1 x hidden
  Parameter aux_b2;        // 1

  std::vector<Parameter*> all();  // stable, checkpoint order
  void zero_grads();
  std::uint64_t value_checksum() const;
};

// Softmax attention over a user's source-item history (the attentive
// characteristic preference module). Returns the weight vector node.
ad::NodeId attention_weights(ad::Tape& tape, ModelParams& params,
                             std::span<const std::int32_t> history_items);

// Builds x_m for one example: the attention-pooled history acts as a
// user-specific projection of the user embedding, concatenated with the
// candidate target-item embedding. Never reads example.rating.
ad::NodeId embed_characteristic(ad::Tape& tape, ModelParams& params,
                                const UnionUserIndex& users, const RatingExample& example,
                                bool ablate_acp = false);

// (x_m, y_m) pair already on the tape; y is appended as one raw coordinate.
struct EncodedPair {
  ad::NodeId x = -1;
  double y = 0.0;
};

// Preference aggregator: permutation-invariant mean of per-pair encodings,
// projected to a diagonal Gaussian over the task latent.
LatentNodes encode_latent(ad::Tape& tape, ModelParams& params,
                          std::span<const EncodedPair> pairs);

// Preference remainer: permutation-invariant mean of per-pair encodings.
ad::NodeId encode_remainer(ad::Tape& tape, ModelParams& params,
                           std::span<const EncodedPair> pairs);

// Reparameterized draw; gradients flow to mu and log sigma, not epsilon.
// In kMean mode epsilon is zero and z equals mu.
struct LatentSample {
  ad::NodeId z = -1;
  Tensor epsilon;
};
LatentSample sample_latent(ad::Tape& tape, const LatentNodes& latent, Rng* rng,
                           LatentMode mode, const Tensor* frozen_epsilon = nullptr);

// Per-layer FiLM coefficients derived from the remainer output h.
struct FilmNodes {
  std::vector<ad::NodeId> gamma;
  std::vector<ad::NodeId> beta;
};
FilmNodes film_coefficients(ad::Tape& tape, ModelParams& params, ad::NodeId h);

// Adaptive conditional decoder; film == nullptr gives the plain MLP
// decoder (the w/o PRM ablation).
ad::NodeId decode_rating(ad::Tape& tape, ModelParams& params, ad::NodeId x, ad::NodeId z,
                         const FilmNodes* film);

// Convenience matching the one-example surface: computes the FiLM
// coefficients from h internally.
ad::NodeId decode_rating(ad::Tape& tape, ModelParams& params, ad::NodeId x, ad::NodeId z,
                         ad::NodeId h, bool ablate_prm);

struct TaskLatents {
  GaussianLatent prior;
  std::optional<GaussianLatent> posterior;
  Tensor z;
  Tensor h;  // empty when the remainer is ablated
  Tensor epsilon;
};

struct ForwardResult {
  std::vector<ad::NodeId> predictions;  // scalar node per query example
  LatentNodes prior;
  std::optional<LatentNodes> posterior;
  ad::NodeId z = -1;
  ad::NodeId h = -1;
  Tensor epsilon;

  TaskLatents latents(const ad::Tape& tape) const;
};

// Full pass over one task. Training: posterior from the query set, z
// sampled from it, h from the support set. Testing: z from the prior
// (mean by default); query ratings are never read.
ForwardResult forward_task(ad::Tape& tape, ModelParams& params, const UnionUserIndex& users,
                           const Task& task, Phase phase, Rng* rng,
                           const AblationFlags& ablations = {},
                           LatentMode test_mode = LatentMode::kMean,
                           const Tensor* frozen_epsilon = nullptr);

}  // namespace cdrnp
