#pragma once

// Image side of the pipeline: image ingestion, patchification, the two
// stand-in patch encoders whose outputs are concatenated channel-wise, and the
// projectors that map visual features into the language-model embedding space.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cobra/container.hpp"
#include "cobra/ssm.hpp"
#include "cobra/tensor.hpp"

namespace cobra::vision {

// C x H x W pixels in [0, 1], channel-major.
struct ImageInput {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::string source;
  std::size_t original_height = 0;
  std::size_t original_width = 0;

  static ImageInput blank(std::size_t side, double value = 0.0);

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  // Three channels, square, pixel count consistent, values finite.
  void validate() const;
};

ImageInput parse_ppm(std::span<const std::uint8_t> bytes);
ImageInput load_ppm(const std::filesystem::path& path);
void save_ppm(const ImageInput& img, const std::filesystem::path& path);
// Headerless little-endian f64 array holding 3 x S x S values.
ImageInput load_raw_chw(const std::filesystem::path& path);
// Picks the reader from the extension (.ppm, otherwise raw).
ImageInput load_image(const std::filesystem::path& path);
ImageInput resize_bilinear(const ImageInput& img, std::size_t side);

struct PatchGrid {
  std::size_t patch_size = 0;
  std::size_t grid_side = 0;
  std::size_t channels = 3;
  Matrix patches;  // N_v x (C * P * P), row-major over the grid

  std::size_t count() const { return patches.rows(); }
};

// Non-overlapping P x P patches. Within a patch values are ordered channel,
// then row, then column.
PatchGrid patchify(const ImageInput& img, std::size_t patch_size);

// Stand-in patch encoder: per-patch linear embedding followed by one global
// mixing layer that adds a projected mean-pooled context vector back to every
// token. The returned features are this pre-head representation.
struct ToyEncoderWeights {
  std::size_t patch_size = 0;
  std::size_t channels = 3;
  Matrix embed;  // dim x (C * P * P)
  Vector bias;   // dim
  Matrix mix;    // dim x dim

  std::size_t dim() const { return bias.size(); }
  static ToyEncoderWeights init(std::size_t patch_size, std::size_t dim, std::uint64_t seed);
  void save(WeightContainer& out, const std::string& prefix) const;
  static ToyEncoderWeights load(const WeightContainer& in, const std::string& prefix, std::size_t patch_size);
};

Matrix encode_patches(const ToyEncoderWeights& enc, const PatchGrid& grid);

struct VisualFeatures {
  Matrix r_v;              // N_v x (dim_a + dim_b)
  std::size_t grid_side = 0;  // 0 when the token count is not a square
  std::size_t dim_a = 0;
  std::size_t dim_b = 0;

  std::size_t tokens() const { return r_v.rows(); }
};

// Channel-wise concatenation [enc_a(X); enc_b(X)], enc_a block first.
VisualFeatures encode_dual(const PatchGrid& grid, const ToyEncoderWeights& enc_a,
                           const ToyEncoderWeights& enc_b);

// Feature files are weight containers holding a rank-2 "features" entry.
void write_features(const VisualFeatures& f, const std::filesystem::path& path);
VisualFeatures parse_features(std::span<const std::uint8_t> bytes);
VisualFeatures ingest_external_features(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Projectors
// ---------------------------------------------------------------------------

enum class ProjectorKind { Mlp, Ldp };
ProjectorKind parse_projector_kind(std::string_view name);
std::string_view to_string(ProjectorKind kind);

// Two-layer perceptron with GELU in between.
struct MlpWeights {
  Matrix w1;  // hidden x in
  Vector b1;
  Matrix w2;  // out x hidden
  Vector b2;

  std::size_t in_dim() const { return w1.cols(); }
  std::size_t out_dim() const { return w2.rows(); }
  static MlpWeights init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  // Square identity layers with zero bias.
  static MlpWeights identity(std::size_t dim);
  static MlpWeights zeros_like(const MlpWeights& w);
};

struct ProjectedVisualTokens {
  Matrix h_v;                 // M x model_dim
  std::size_t grid_side = 0;  // side of the (possibly pooled) token grid
};

// Pointwise MLP, token count preserved.
ProjectedVisualTokens project_mlp(const Matrix& r_v, const MlpWeights& w);

// Adaptive 2-D average pooling of a row-major side x side token grid.
// Bin i covers [floor(i*g/o), ceil((i+1)*g/o)).
Matrix adaptive_avg_pool(const Matrix& tokens, std::size_t grid_side, std::size_t out_side);
std::size_t ldp_output_side(std::size_t grid_side, std::size_t stride);

struct LdpWeights {
  MlpWeights pointwise;  // before pooling
  Matrix w_post;         // out x out, after pooling
  Vector b_post;
  std::size_t out_side = 0;

  static LdpWeights init(std::size_t in, std::size_t hidden, std::size_t out, std::size_t out_side, Rng& rng);
};

// Pointwise MLP -> adaptive average pool to out_side x out_side -> pointwise
// linear layer.
ProjectedVisualTokens project_ldp(const Matrix& r_v, std::size_t grid_side, const LdpWeights& w);

// Either projector behind one interface, with the training hooks.
struct Projector {
  ProjectorKind kind = ProjectorKind::Mlp;
  MlpWeights mlp;  // the pointwise MLP for both kinds
  Matrix w_post;   // LDP only
  Vector b_post;
  std::size_t out_side = 0;

  static Projector make_mlp(MlpWeights w);
  static Projector make_ldp(LdpWeights w);
  static Projector zeros_like(const Projector& p);

  std::size_t in_dim() const { return mlp.in_dim(); }
  std::size_t out_dim() const { return mlp.out_dim(); }
  // Visual token count produced for an input grid.
  std::size_t output_tokens(std::size_t input_tokens, std::size_t grid_side) const;

  ProjectedVisualTokens forward(const VisualFeatures& f) const;
  std::vector<ssm::ParamRef> params();
  void save(WeightContainer& out, const std::string& prefix) const;
  static Projector load(const WeightContainer& in, const std::string& prefix);
};

struct ProjectorCache {
  Matrix input, hidden_pre, mlp_out, pooled;
  std::size_t grid_side = 0;
};

ProjectedVisualTokens projector_forward_train(const Projector& p, const VisualFeatures& f, ProjectorCache& cache);
// Accumulates into `grads`; the encoders are frozen so no input gradient is
// returned.
void projector_backward(const Projector& p, const ProjectorCache& cache, const Matrix& d_out, Projector& grads);

}  // namespace cobra::vision
