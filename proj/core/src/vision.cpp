#include "cobra/vision.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace cobra::vision {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal PPM header tokenizer: whitespace separated, '#' comments to EOL.
class PpmHeader {
 public:
  explicit PpmHeader(std::span<const std::uint8_t> b) : b_(b) {}

  std::string token() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(b_[pos_]) && b_[pos_] != '#') ++pos_;
    if (start == pos_) throw FormatError("PPM: truncated header", pos_);
    return std::string(reinterpret_cast<const char*>(b_.data() + start), pos_ - start);
  }

  std::size_t number(const char* what) {
    const auto at = pos_;
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
        t.size() > 9) {
      throw FormatError(std::string("PPM: bad ") + what + " '" + t + "'", at);
    }
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("PPM: missing raster separator", pos_);
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

ImageInput ImageInput::blank(std::size_t side, double value) {
  ImageInput img;
  img.height = img.width = img.original_height = img.original_width = side;
  img.pixels.assign(3 * side * side, value);
  return img;
}

void ImageInput::validate() const {
  if (channels != 3) throw ShapeError("image must have 3 channels");
  if (height == 0 || height != width) throw ShapeError("image must be square and non-empty");
  if (pixels.size() != channels * height * width) throw ShapeError("image pixel count mismatch");
  for (double v : pixels) {
    if (!std::isfinite(v)) throw InvalidParameterError("image contains NaN or Inf");
  }
}

ImageInput parse_ppm(std::span<const std::uint8_t> bytes) {
  PpmHeader hdr(bytes);
  if (hdr.token() != "P6") throw FormatError("PPM: expected magic P6", 0);
  const std::size_t w = hdr.number("width");
  const std::size_t h = hdr.number("height");
  const std::size_t maxval = hdr.number("maxval");
  if (w == 0 || h == 0) throw FormatError("PPM: zero dimension", 0);
  if (maxval == 0 || maxval > 65535) throw FormatError("PPM: maxval must be 1..65535", 0);
  const std::size_t start = hdr.raster_start();
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t need = w * h * 3 * bps;
  if (bytes.size() - std::min(start, bytes.size()) < need) {
    throw FormatError("PPM: raster truncated, need " + std::to_string(need) + " bytes", bytes.size());
  }
  ImageInput img;
  img.height = img.original_height = h;
  img.width = img.original_width = w;
  img.pixels.assign(3 * w * h, 0.0);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t off = start + ((y * w + x) * 3 + c) * bps;
        const std::size_t v = bps == 1 ? bytes[off] : (static_cast<std::size_t>(bytes[off]) << 8) | bytes[off + 1];
        img.at(c, y, x) = std::min(1.0, static_cast<double>(v) * scale);
      }
    }
  }
  return img;
}

ImageInput load_ppm(const std::filesystem::path& path) {
  auto img = parse_ppm(read_file(path));
  img.source = path.string();
  return img;
}

void save_ppm(const ImageInput& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
      }
    }
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ImageInput load_raw_chw(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 8 != 0) throw FormatError("raw image: size is not a multiple of 8 bytes", bytes.size());
  const std::size_t n = bytes.size() / 8;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n) / 3.0)));
  if (side == 0 || 3 * side * side != n) {
    throw FormatError("raw image: " + std::to_string(n) + " values is not 3 x S x S", 0);
  }
  ImageInput img = ImageInput::blank(side);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t u = 0;
    for (std::size_t k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    img.pixels[i] = std::bit_cast<double>(u);
  }
  img.source = path.string();
  img.validate();
  return img;
}

ImageInput load_image(const std::filesystem::path& path) {
  if (path.extension() == ".ppm") return load_ppm(path);
  return load_raw_chw(path);
}

ImageInput resize_bilinear(const ImageInput& img, std::size_t side) {
  if (side == 0) throw ConfigError("resize: target side must be > 0");
  if (img.height == 0 || img.width == 0) throw ShapeError("resize: empty image");
  ImageInput out = ImageInput::blank(side);
  out.source = img.source;
  out.original_height = img.original_height ? img.original_height : img.height;
  out.original_width = img.original_width ? img.original_width : img.width;
  const double sy = static_cast<double>(img.height) / static_cast<double>(side);
  const double sx = static_cast<double>(img.width) / static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

PatchGrid patchify(const ImageInput& img, std::size_t patch_size) {
  img.validate();
  if (patch_size == 0) throw ConfigError("patchify: patch size must be > 0");
  if (img.height % patch_size != 0) {
    throw ConfigError("patchify: image side " + std::to_string(img.height) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t g = img.height / patch_size, P = patch_size;
  PatchGrid grid{P, g, 3, Matrix(g * g, 3 * P * P)};
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      auto row = grid.patches.row(gy * g + gx);
      std::size_t k = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t py = 0; py < P; ++py) {
          for (std::size_t px = 0; px < P; ++px) row[k++] = img.at(c, gy * P + py, gx * P + px);
        }
      }
    }
  }
  return grid;
}

ToyEncoderWeights ToyEncoderWeights::init(std::size_t patch_size, std::size_t dim, std::uint64_t seed) {
  if (patch_size == 0 || dim == 0) throw ConfigError("toy encoder: patch size and dim must be > 0");
  Rng rng(seed);
  ToyEncoderWeights w;
  w.patch_size = patch_size;
  const std::size_t fan_in = 3 * patch_size * patch_size;
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  w.embed = random_uniform(dim, fan_in, -s, s, rng);
  const Matrix b = random_uniform(1, dim, -0.1, 0.1, rng);
  w.bias.assign(b.flat().begin(), b.flat().end());
  const double m = 0.5 / std::sqrt(static_cast<double>(dim));
  w.mix = random_uniform(dim, dim, -m, m, rng);
  return w;
}

void ToyEncoderWeights::save(WeightContainer& out, const std::string& prefix) const {
  out.put(prefix + "embed", embed);
  out.put_vector(prefix + "bias", bias);
  out.put(prefix + "mix", mix);
}

ToyEncoderWeights ToyEncoderWeights::load(const WeightContainer& in, const std::string& prefix,
                                          std::size_t patch_size) {
  ToyEncoderWeights w;
  w.patch_size = patch_size;
  w.embed = in.matrix(prefix + "embed");
  const std::size_t dim = w.embed.rows();
  if (w.embed.cols() != 3 * patch_size * patch_size) {
    throw FormatError("entry '" + prefix + "embed' does not match patch size " + std::to_string(patch_size), 0);
  }
  w.bias = in.vector(prefix + "bias", dim);
  w.mix = in.matrix(prefix + "mix", dim, dim);
  return w;
}

Matrix encode_patches(const ToyEncoderWeights& enc, const PatchGrid& grid) {
  if (enc.patch_size != grid.patch_size) {
    throw ShapeError("encoder patch size " + std::to_string(enc.patch_size) + " != grid patch size " +
                     std::to_string(grid.patch_size));
  }
  require_shape(enc.embed.cols() == grid.patches.cols(), "encoder input width != patch width");
  Matrix e = linear_rows(grid.patches, enc.embed);
  Vector mean(enc.dim(), 0.0);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto r = e.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      r[k] += enc.bias[k];
      mean[k] += r[k];
    }
  }
  for (auto& m : mean) m /= static_cast<double>(e.rows());
  Vector ctx(enc.dim());
  matvec(enc.mix, mean, ctx);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto r = e.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += ctx[k];
  }
  return e;
}

VisualFeatures encode_dual(const PatchGrid& grid, const ToyEncoderWeights& enc_a, const ToyEncoderWeights& enc_b) {
  const Matrix a = encode_patches(enc_a, grid);
  const Matrix b = encode_patches(enc_b, grid);
  VisualFeatures f{Matrix(grid.count(), a.cols() + b.cols()), grid.grid_side, a.cols(), b.cols()};
  for (std::size_t i = 0; i < grid.count(); ++i) {
    auto row = f.r_v.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), row.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), row.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return f;
}

namespace {

std::size_t square_side(std::size_t n) {
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return s * s == n ? s : 0;
}

}  // namespace

void write_features(const VisualFeatures& f, const std::filesystem::path& path) {
  WeightContainer c;
  c.put("features", f.r_v);
  c.save(path);
}

VisualFeatures parse_features(std::span<const std::uint8_t> bytes) {
  const auto c = WeightContainer::parse(bytes);
  VisualFeatures f;
  f.r_v = c.matrix("features");
  if (f.r_v.rows() == 0 || f.r_v.cols() == 0) throw FormatError("features entry is empty", 0);
  f.grid_side = square_side(f.r_v.rows());
  f.dim_a = f.r_v.cols();
  return f;
}

VisualFeatures ingest_external_features(const std::filesystem::path& path) {
  return parse_features(read_file(path));
}

// ---------------------------------------------------------------------------
// Projectors
// ---------------------------------------------------------------------------

ProjectorKind parse_projector_kind(std::string_view name) {
  if (name == "mlp") return ProjectorKind::Mlp;
  if (name == "ldp") return ProjectorKind::Ldp;
  throw ConfigError("unknown projector '" + std::string(name) + "' (expected mlp|ldp)");
}

std::string_view to_string(ProjectorKind kind) { return kind == ProjectorKind::Mlp ? "mlp" : "ldp"; }

MlpWeights MlpWeights::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  MlpWeights w;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  w.w1 = random_uniform(hidden, in, -s1, s1, rng);
  w.b1 = Vector(hidden, 0.0);
  w.w2 = random_uniform(out, hidden, -s2, s2, rng);
  w.b2 = Vector(out, 0.0);
  return w;
}

MlpWeights MlpWeights::identity(std::size_t dim) {
  return {Matrix::identity(dim), Vector(dim, 0.0), Matrix::identity(dim), Vector(dim, 0.0)};
}

MlpWeights MlpWeights::zeros_like(const MlpWeights& w) {
  return {Matrix(w.w1.rows(), w.w1.cols()), Vector(w.b1.size(), 0.0), Matrix(w.w2.rows(), w.w2.cols()),
          Vector(w.b2.size(), 0.0)};
}

namespace {

void check_mlp(const MlpWeights& w) {
  require_shape(w.w1.rows() == w.b1.size() && w.w2.cols() == w.w1.rows() && w.w2.rows() == w.b2.size(),
                "MLP projector: inconsistent layer shapes");
}

Matrix mlp_rows(const Matrix& x, const MlpWeights& w, Matrix* hidden_pre) {
  check_mlp(w);
  if (x.cols() != w.in_dim()) {
    throw ShapeError("projector input width " + std::to_string(x.cols()) + " != " + std::to_string(w.in_dim()));
  }
  Matrix h = linear_rows(x, w.w1);
  for (std::size_t t = 0; t < h.rows(); ++t) {
    auto r = h.row(t);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += w.b1[k];
  }
  if (hidden_pre) *hidden_pre = h;
  for (auto& v : h.flat()) v = gelu(v);
  Matrix y = linear_rows(h, w.w2);
  for (std::size_t t = 0; t < y.rows(); ++t) {
    auto r = y.row(t);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += w.b2[k];
  }
  return y;
}

void mlp_backward(const MlpWeights& w, const Matrix& hidden_pre, const Matrix& input, const Matrix& d_out,
                  MlpWeights& g) {
  Vector act(w.w1.rows()), dh(w.w1.rows());
  for (std::size_t t = 0; t < d_out.rows(); ++t) {
    const auto hp = hidden_pre.row(t);
    for (std::size_t k = 0; k < act.size(); ++k) act[k] = gelu(hp[k]);
    outer_acc(g.w2, d_out.row(t), act);
    for (std::size_t k = 0; k < g.b2.size(); ++k) g.b2[k] += d_out(t, k);
    std::fill(dh.begin(), dh.end(), 0.0);
    matvec_t_acc(w.w2, d_out.row(t), dh);
    for (std::size_t k = 0; k < dh.size(); ++k) dh[k] *= gelu_grad(hp[k]);
    outer_acc(g.w1, dh, input.row(t));
    for (std::size_t k = 0; k < g.b1.size(); ++k) g.b1[k] += dh[k];
  }
}

struct Bin {
  std::size_t begin, end;
};

Bin adaptive_bin(std::size_t i, std::size_t in, std::size_t out) {
  return {(i * in) / out, ((i + 1) * in + out - 1) / out};
}

Matrix pool_backward(const Matrix& d_pooled, std::size_t g, std::size_t o) {
  Matrix d(g * g, d_pooled.cols());
  for (std::size_t oy = 0; oy < o; ++oy) {
    const auto by = adaptive_bin(oy, g, o);
    for (std::size_t ox = 0; ox < o; ++ox) {
      const auto bx = adaptive_bin(ox, g, o);
      const double inv = 1.0 / static_cast<double>((by.end - by.begin) * (bx.end - bx.begin));
      const auto src = d_pooled.row(oy * o + ox);
      for (std::size_t y = by.begin; y < by.end; ++y) {
        for (std::size_t x = bx.begin; x < bx.end; ++x) {
          auto dst = d.row(y * g + x);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k] * inv;
        }
      }
    }
  }
  return d;
}

void check_ldp_grid(std::size_t tokens, std::size_t grid_side, std::size_t out_side) {
  if (grid_side == 0 || grid_side * grid_side != tokens) {
    throw ConfigError("LDP projector needs a square token grid, got " + std::to_string(tokens) + " tokens");
  }
  if (out_side == 0 || out_side > grid_side) {
    throw ConfigError("LDP output grid " + std::to_string(out_side) + " must be in [1, " +
                      std::to_string(grid_side) + "]");
  }
}

}  // namespace

ProjectedVisualTokens project_mlp(const Matrix& r_v, const MlpWeights& w) {
  const std::size_t side = square_side(r_v.rows());
  return {mlp_rows(r_v, w, nullptr), side};
}

Matrix adaptive_avg_pool(const Matrix& tokens, std::size_t grid_side, std::size_t out_side) {
  check_ldp_grid(tokens.rows(), grid_side, out_side);
  const std::size_t g = grid_side, o = out_side;
  Matrix out(o * o, tokens.cols());
  for (std::size_t oy = 0; oy < o; ++oy) {
    const auto by = adaptive_bin(oy, g, o);
    for (std::size_t ox = 0; ox < o; ++ox) {
      const auto bx = adaptive_bin(ox, g, o);
      auto dst = out.row(oy * o + ox);
      for (std::size_t y = by.begin; y < by.end; ++y) {
        for (std::size_t x = bx.begin; x < bx.end; ++x) {
          const auto src = tokens.row(y * g + x);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
      const double inv = 1.0 / static_cast<double>((by.end - by.begin) * (bx.end - bx.begin));
      for (auto& v : dst) v *= inv;
    }
  }
  return out;
}

std::size_t ldp_output_side(std::size_t grid_side, std::size_t stride) {
  if (stride == 0) throw ConfigError("LDP stride must be >= 1");
  return (grid_side + stride - 1) / stride;
}

LdpWeights LdpWeights::init(std::size_t in, std::size_t hidden, std::size_t out, std::size_t out_side, Rng& rng) {
  LdpWeights w;
  w.pointwise = MlpWeights::init(in, hidden, out, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(out));
  w.w_post = random_uniform(out, out, -s, s, rng);
  for (std::size_t i = 0; i < out; ++i) w.w_post(i, i) += 1.0;
  w.b_post = Vector(out, 0.0);
  w.out_side = out_side;
  return w;
}

ProjectedVisualTokens project_ldp(const Matrix& r_v, std::size_t grid_side, const LdpWeights& w) {
  check_ldp_grid(r_v.rows(), grid_side, w.out_side);
  require_shape(w.w_post.rows() == w.b_post.size() && w.w_post.cols() == w.pointwise.out_dim(),
                "LDP post layer shape mismatch");
  const Matrix pooled = adaptive_avg_pool(mlp_rows(r_v, w.pointwise, nullptr), grid_side, w.out_side);
  Matrix out = linear_rows(pooled, w.w_post);
  for (std::size_t t = 0; t < out.rows(); ++t) {
    auto r = out.row(t);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += w.b_post[k];
  }
  return {std::move(out), w.out_side};
}

Projector Projector::make_mlp(MlpWeights w) {
  check_mlp(w);
  Projector p;
  p.kind = ProjectorKind::Mlp;
  p.mlp = std::move(w);
  return p;
}

Projector Projector::make_ldp(LdpWeights w) {
  check_mlp(w.pointwise);
  Projector p;
  p.kind = ProjectorKind::Ldp;
  p.mlp = std::move(w.pointwise);
  p.w_post = std::move(w.w_post);
  p.b_post = std::move(w.b_post);
  p.out_side = w.out_side;
  return p;
}

Projector Projector::zeros_like(const Projector& p) {
  Projector z;
  z.kind = p.kind;
  z.mlp = MlpWeights::zeros_like(p.mlp);
  z.w_post = Matrix(p.w_post.rows(), p.w_post.cols());
  z.b_post = Vector(p.b_post.size(), 0.0);
  z.out_side = p.out_side;
  return z;
}

std::size_t Projector::output_tokens(std::size_t input_tokens, std::size_t grid_side) const {
  if (kind == ProjectorKind::Mlp) return input_tokens;
  check_ldp_grid(input_tokens, grid_side, out_side);
  return out_side * out_side;
}

ProjectedVisualTokens Projector::forward(const VisualFeatures& f) const {
  if (kind == ProjectorKind::Mlp) return project_mlp(f.r_v, mlp);
  return project_ldp(f.r_v, f.grid_side, LdpWeights{mlp, w_post, b_post, out_side});
}

std::vector<ssm::ParamRef> Projector::params() {
  std::vector<ssm::ParamRef> p{
      {"w1", mlp.w1.flat(), true},
      {"b1", mlp.b1, false},
      {"w2", mlp.w2.flat(), true},
      {"b2", mlp.b2, false},
  };
  if (kind == ProjectorKind::Ldp) {
    p.push_back({"w_post", w_post.flat(), true});
    p.push_back({"b_post", b_post, false});
  }
  return p;
}

void Projector::save(WeightContainer& out, const std::string& prefix) const {
  out.put_scalar(prefix + "kind", kind == ProjectorKind::Mlp ? 0.0 : 1.0);
  out.put(prefix + "w1", mlp.w1);
  out.put_vector(prefix + "b1", mlp.b1);
  out.put(prefix + "w2", mlp.w2);
  out.put_vector(prefix + "b2", mlp.b2);
  if (kind == ProjectorKind::Ldp) {
    out.put(prefix + "w_post", w_post);
    out.put_vector(prefix + "b_post", b_post);
    out.put_scalar(prefix + "out_side", static_cast<double>(out_side));
  }
}

Projector Projector::load(const WeightContainer& in, const std::string& prefix) {
  const double kind = in.scalar(prefix + "kind");
  if (kind != 0.0 && kind != 1.0) throw FormatError("entry '" + prefix + "kind' must be 0 (mlp) or 1 (ldp)", 0);
  MlpWeights m;
  m.w1 = in.matrix(prefix + "w1");
  m.b1 = in.vector(prefix + "b1", m.w1.rows());
  m.w2 = in.matrix(prefix + "w2");
  if (m.w2.cols() != m.w1.rows()) throw FormatError("projector layer shapes do not chain", 0);
  m.b2 = in.vector(prefix + "b2", m.w2.rows());
  if (kind == 0.0) return make_mlp(std::move(m));
  LdpWeights l;
  l.pointwise = std::move(m);
  const std::size_t out = l.pointwise.out_dim();
  l.w_post = in.matrix(prefix + "w_post", out, out);
  l.b_post = in.vector(prefix + "b_post", out);
  const double side = in.scalar(prefix + "out_side");
  if (!(side >= 1.0) || side != std::floor(side)) throw FormatError("projector out_side invalid", 0);
  l.out_side = static_cast<std::size_t>(side);
  return make_ldp(std::move(l));
}

ProjectedVisualTokens projector_forward_train(const Projector& p, const VisualFeatures& f, ProjectorCache& cache) {
  cache.input = f.r_v;
  cache.grid_side = f.grid_side;
  cache.mlp_out = mlp_rows(f.r_v, p.mlp, &cache.hidden_pre);
  if (p.kind == ProjectorKind::Mlp) return {cache.mlp_out, square_side(f.r_v.rows())};
  cache.pooled = adaptive_avg_pool(cache.mlp_out, f.grid_side, p.out_side);
  Matrix out = linear_rows(cache.pooled, p.w_post);
  for (std::size_t t = 0; t < out.rows(); ++t) {
    auto r = out.row(t);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += p.b_post[k];
  }
  return {std::move(out), p.out_side};
}

void projector_backward(const Projector& p, const ProjectorCache& cache, const Matrix& d_out, Projector& grads) {
  if (p.kind == ProjectorKind::Mlp) {
    mlp_backward(p.mlp, cache.hidden_pre, cache.input, d_out, grads.mlp);
    return;
  }
  Matrix d_pooled(cache.pooled.rows(), cache.pooled.cols());
  for (std::size_t t = 0; t < d_out.rows(); ++t) {
    outer_acc(grads.w_post, d_out.row(t), cache.pooled.row(t));
    for (std::size_t k = 0; k < grads.b_post.size(); ++k) grads.b_post[k] += d_out(t, k);
    matvec_t_acc(p.w_post, d_out.row(t), d_pooled.row(t));
  }
  const Matrix d_mlp = pool_backward(d_pooled, cache.grid_side, p.out_side);
  mlp_backward(p.mlp, cache.hidden_pre, cache.input, d_mlp, grads.mlp);
}

}  // namespace cobra::vision
