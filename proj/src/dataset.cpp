#include "rnas/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rnas/binary_io.hpp"

namespace rnas {

namespace {

constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void write_tensor(std::ostream& out, const RawTensor& t) {
  if (shape_size(t.shape) != t.values.size()) throw ShapeError("tensor container: shape/value count mismatch");
  out.write("RTEN", 4);
  io::write_uint<std::uint32_t>(out, kTensorVersion);
  io::write_uint<std::uint8_t>(out, std::uint8_t(t.dtype));
  io::write_uint<std::uint32_t>(out, std::uint32_t(t.shape.size()));
  for (std::size_t e : t.shape) io::write_uint<std::uint32_t>(out, std::uint32_t(e));
  switch (t.dtype) {
    case DType::u8: {
      std::string bytes(t.values.size(), '\0');
      for (std::size_t i = 0; i < t.values.size(); ++i) {
        const double v = t.values[i];
        if (!(v >= 0 && v <= 255) || v != std::floor(v)) {
          throw DataError("tensor container: value " + std::to_string(v) + " not representable as u8");
        }
        bytes[i] = char(std::uint8_t(v));
      }
      out.write(bytes.data(), std::streamsize(bytes.size()));
      break;
    }
    case DType::f32: {
      std::vector<float> f(t.values.begin(), t.values.end());
      io::write_floats<float>(out, f);
      break;
    }
    case DType::f64:
      io::write_floats<double>(out, t.values);
      break;
  }
}

RawTensor read_tensor(std::istream& in) {
  io::expect_magic(in, "RTEN", "tensor container");
  const auto version = io::read_uint<std::uint32_t>(in, "tensor version");
  if (version != kTensorVersion) throw DataError("tensor container: unsupported version " + std::to_string(version));
  RawTensor t;
  const auto code = io::read_uint<std::uint8_t>(in, "tensor dtype");
  if (code < 1 || code > 3) throw DataError("tensor container: unknown dtype code " + std::to_string(code));
  t.dtype = DType(code);
  const auto rank = io::read_uint<std::uint32_t>(in, "tensor rank");
  if (rank == 0 || rank > kMaxRank) throw DataError("tensor container: unsupported rank " + std::to_string(rank));
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = io::read_uint<std::uint32_t>(in, "tensor extents");
    if (e == 0) throw DataError("tensor container: zero extent on axis " + std::to_string(i));
    t.shape.push_back(e);
    count *= e;
    if (count > (std::size_t(1) << 34)) throw DataError("tensor container: implausible size");
  }
  t.values.resize(count);
  switch (t.dtype) {
    case DType::u8: {
      std::string bytes(count, '\0');
      if (!in.read(bytes.data(), std::streamsize(count))) throw DataError("truncated file while reading tensor payload");
      for (std::size_t i = 0; i < count; ++i) t.values[i] = double(std::uint8_t(bytes[i]));
      break;
    }
    case DType::f32: {
      std::vector<float> f(count);
      io::read_floats<float>(in, f, "tensor payload");
      std::copy(f.begin(), f.end(), t.values.begin());
      break;
    }
    case DType::f64:
      io::read_floats<double>(in, t.values, "tensor payload");
      break;
  }
  return t;
}

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (images.rank() != 4) throw DataError("dataset images must be [N,C,H,W], got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw DataError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                    " labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double v = images[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DataError("pixel value " + std::to_string(v) + " outside [0,1] at flat index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " out of range [0," + std::to_string(num_classes) +
                      ") at sample " + std::to_string(i));
    }
  }
}

void save_dataset(const Dataset& d, std::ostream& out) {
  d.validate();
  RawTensor img{d.pixel_dtype, d.images.shape(), {d.images.data().begin(), d.images.data().end()}};
  if (d.pixel_dtype == DType::u8) {
    for (double& v : img.values) v = std::round(v * 255.0);
  }
  write_tensor(out, img);
  RawTensor lab{DType::u8, {d.labels.size()}, {}};
  for (std::int32_t l : d.labels) {
    if (l > 255) throw DataError("label " + std::to_string(l) + " does not fit the u8 label container");
    lab.values.push_back(double(l));
  }
  write_tensor(out, lab);
}

void save_dataset_file(const Dataset& d, const std::string& path) {
  std::ostringstream out;
  save_dataset(d, out);
  io::write_file_atomic(path, out.str());
}

Dataset read_dataset(std::istream& in, std::size_t num_classes) {
  RawTensor img = read_tensor(in);
  if (img.shape.size() != 4) throw DataError("dataset images must be rank 4, got " + shape_string(img.shape));
  RawTensor lab = read_tensor(in);
  if (lab.shape.size() != 1) throw DataError("dataset labels must be rank 1, got " + shape_string(lab.shape));
  Dataset d;
  d.pixel_dtype = img.dtype;
  if (img.dtype == DType::u8) {
    for (double& v : img.values) v /= 255.0;
  }
  d.images = Tensor<double>(img.shape, std::move(img.values));
  std::int32_t max_label = 0;
  for (double v : lab.values) {
    if (v != std::floor(v) || v < 0 || v > 1e9) throw DataError("dataset label " + std::to_string(v) + " is not a class index");
    d.labels.push_back(std::int32_t(v));
    max_label = std::max(max_label, std::int32_t(v));
  }
  d.num_classes = num_classes ? num_classes : std::size_t(max_label) + 1;
  d.validate();
  return d;
}

Dataset load_dataset(const std::string& path, std::size_t num_classes) {
  const std::string bytes = io::read_file(path);
  Dataset d;
  if (ends_with(path, ".csv")) {
    d = parse_csv_dataset(bytes, num_classes);
  } else {
    std::istringstream in(bytes);
    d = read_dataset(in, num_classes);
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after dataset containers in " + path);
  }
  const auto slash = path.find_last_of('/');
  d.name = slash == std::string::npos ? path : path.substr(slash + 1);
  return d;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(std::string_view field, std::size_t line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError("csv line " + std::to_string(line) + ": '" + std::string(field) + "' is not a number");
  }
  return v;
}

}  // namespace

Dataset parse_csv_dataset(const std::string& text, std::size_t num_classes) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Shape sample;
  std::vector<double> pixels;
  Dataset d;
  d.pixel_dtype = DType::u8;
  std::int32_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (line[0] == '#') {
      if (fields[0] != "#shape" || fields.size() != 4 || !d.labels.empty()) {
        throw DataError("csv line " + std::to_string(line_no) + ": expected '#shape,C,H,W' before the first row");
      }
      for (std::size_t i = 1; i < 4; ++i) {
        const double e = parse_number(fields[i], line_no);
        if (e < 1 || e != std::floor(e)) throw DataError("csv line " + std::to_string(line_no) + ": bad extent");
        sample.push_back(std::size_t(e));
      }
      continue;
    }
    if (fields.size() < 2) throw DataError("csv line " + std::to_string(line_no) + ": expected label and pixels");
    const std::size_t n_pix = fields.size() - 1;
    if (sample.empty()) {
      const auto side = std::size_t(std::lround(std::sqrt(double(n_pix))));
      if (side * side != n_pix) {
        throw DataError("csv line " + std::to_string(line_no) + ": " + std::to_string(n_pix) +
                        " pixels is not a square image; add a '#shape,C,H,W' line");
      }
      sample = {1, side, side};
    }
    if (n_pix != shape_size(sample)) {
      throw DataError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(shape_size(sample)) +
                      " pixels, found " + std::to_string(n_pix));
    }
    const double label = parse_number(fields[0], line_no);
    if (label < 0 || label != std::floor(label) || label > 255) {
      throw DataError("csv line " + std::to_string(line_no) + ": label " + std::string(fields[0]) + " out of range");
    }
    d.labels.push_back(std::int32_t(label));
    max_label = std::max(max_label, std::int32_t(label));
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const double v = parse_number(fields[i], line_no);
      if (v < 0 || v > 255 || v != std::floor(v)) {
        throw DataError("csv line " + std::to_string(line_no) + ": pixel " + std::string(fields[i]) +
                        " outside 0..255");
      }
      pixels.push_back(v / 255.0);
    }
  }
  if (d.labels.empty()) throw DataError("csv dataset has no rows");
  Shape full{d.labels.size()};
  full.insert(full.end(), sample.begin(), sample.end());
  d.images = Tensor<double>(full, std::move(pixels));
  d.num_classes = num_classes ? num_classes : std::size_t(max_label) + 1;
  d.validate();
  return d;
}

Dataset make_synthetic(const SyntheticOptions& opt) {
  if (opt.samples == 0 || opt.classes < 2 || opt.classes > 4 || opt.size < 8) {
    throw UsageError("synthetic data: need samples >= 1, 2..4 classes and size >= 8");
  }
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, opt.noise);
  const std::size_t s = opt.size;
  Dataset d;
  d.images = Tensor<double>({opt.samples, 3, s, s});
  d.num_classes = opt.classes;
  d.pixel_dtype = DType::f32;
  d.name = "synthetic";
  const double hs = double(s) / 16.0;
  for (std::size_t n = 0; n < opt.samples; ++n) {
    const auto label = std::int32_t(n % opt.classes);
    d.labels.push_back(label);
    double bg[3], fg[3];
    const double base = 0.2 + 0.3 * unit(rng);
    const double contrast = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.3 + 0.15 * unit(rng));
    for (int c = 0; c < 3; ++c) {
      bg[c] = base + 0.05 * (unit(rng) - 0.5);
      fg[c] = std::clamp(bg[c] + contrast * (0.8 + 0.4 * unit(rng)), 0.0, 1.0);
    }
    const double cy = s / 2.0 + (unit(rng) - 0.5) * 4 * hs, cx = s / 2.0 + (unit(rng) - 0.5) * 4 * hs;
    const double r = (2.5 + 1.5 * unit(rng)) * hs;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
        bool on = false;
        switch (label) {
          case 0: on = std::abs(dy) <= r && std::abs(dx) <= r; break;
          case 1: on = dy * dy + dx * dx <= r * r * 1.3; break;
          case 2: on = std::abs(dy) <= 0.9 * hs && std::abs(dx) <= 1.8 * r; break;
          default: on = (std::abs(dy) <= 0.9 * hs && std::abs(dx) <= 1.5 * r) || (std::abs(dx) <= 0.9 * hs && std::abs(dy) <= 1.5 * r);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = (on ? fg[c] : bg[c]) + gauss(rng);
          d.images.at(n, c, y, x) = double(float(std::clamp(v, 0.0, 1.0)));
        }
      }
  }
  // Shuffle so class order carries no information.
  std::vector<std::size_t> perm(opt.samples);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset out = d;
  out.images = gather_rows<double>(d.images, perm);
  out.labels = gather_labels(d.labels, perm);
  out.validate();
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<double>& images, std::span<const std::size_t> indices) {
  Shape shape = images.shape();
  const std::size_t row = images.size() / shape[0];
  shape[0] = indices.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= images.dim(0)) throw ShapeError("gather_rows: index out of range on axis 0");
    const double* src = images.ptr() + indices[i] * row;
    std::transform(src, src + row, out.ptr() + i * row, [](double v) { return T(v); });
  }
  return out;
}

std::vector<std::int32_t> gather_labels(std::span<const std::int32_t> labels, std::span<const std::size_t> indices) {
  std::vector<std::int32_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

template <typename T>
void augment_batch(Tensor<T>& batch, std::size_t max_shift, std::mt19937_64& rng) {
  if (batch.rank() != 4) return;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::uniform_int_distribution<int> shift(-int(max_shift), int(max_shift));
  std::bernoulli_distribution flip(0.5);
  std::vector<T> plane(h * w);
  for (std::size_t i = 0; i < n; ++i) {
    const bool f = flip(rng);
    const int sy = shift(rng), sx = shift(rng);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = batch.ptr() + (i * c + ch) * h * w;
      std::copy(p, p + h * w, plane.begin());
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const long yy = long(y) - sy;
          long xx = long(x) - sx;
          if (f) xx = long(w) - 1 - xx;
          p[y * w + x] = (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) ? T(0) : plane[std::size_t(yy) * w + std::size_t(xx)];
        }
    }
  }
}

template Tensor<float> gather_rows<float>(const Tensor<double>&, std::span<const std::size_t>);
template Tensor<double> gather_rows<double>(const Tensor<double>&, std::span<const std::size_t>);
template void augment_batch<float>(Tensor<float>&, std::size_t, std::mt19937_64&);
template void augment_batch<double>(Tensor<double>&, std::size_t, std::mt19937_64&);

}  // namespace rnas
