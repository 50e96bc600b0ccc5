#include "oodkit/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "oodkit/error.hpp"

namespace oodkit {

namespace {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
void put_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw CorruptionError("tensor stream truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::row_size() const {
    if (shape_.empty() || shape_[0] == 0) return 0;
    return data_.size() / shape_[0];
}

std::span<const double> Tensor::row(std::size_t i) const {
    const std::size_t n = row_size();
    return std::span<const double>(data_).subspan(i * n, n);
}

std::span<double> Tensor::row(std::size_t i) {
    const std::size_t n = row_size();
    return std::span<double>(data_).subspan(i * n, n);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw DimensionError("stack of zero tensors");
    Shape shape = items.front().shape();
    std::vector<double> data;
    data.reserve(items.size() * items.front().size());
    for (const auto& t : items) {
        if (t.shape() != shape)
            throw DimensionError("stack: shape " + shape_str(t.shape()) + " != " + shape_str(shape));
        data.insert(data.end(), t.values().begin(), t.values().end());
    }
    shape.insert(shape.begin(), items.size());
    return Tensor(std::move(shape), std::move(data));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() == 0 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
        throw DimensionError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<double> data(a.values());
    data.insert(data.end(), b.values().begin(), b.values().end());
    return Tensor(std::move(shape), std::move(data));
}

Tensor take_rows(const Tensor& t, std::span<const std::size_t> indices) {
    Shape shape = t.shape();
    shape[0] = indices.size();
    const std::size_t n = t.row_size();
    std::vector<double> data;
    data.reserve(indices.size() * n);
    for (auto i : indices) {
        if (i >= t.dim(0)) throw DimensionError("take_rows: index out of range");
        auto r = t.row(i);
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor c({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            for (std::size_t j = 0; j < m; ++j) c.at(i, j) += aip * b.at(p, j);
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects a matrix");
    Tensor t({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

SpdFactor spd_factor(const Tensor& m, double ridge) {
    if (m.rank() != 2 || m.dim(0) != m.dim(1))
        throw DimensionError("spd_factor: expected a square matrix, got " + shape_str(m.shape()));
    if (!(ridge >= 0.0)) throw DimensionError("spd_factor: ridge must be nonnegative");
    const std::size_t n = m.dim(0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double scale = std::max({1.0, std::abs(m.at(i, j)), std::abs(m.at(j, i))});
            if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-9 * scale)
                throw DimensionError("spd_factor: matrix is not symmetric");
        }

    SpdFactor f{n, Tensor({n, n})};
    Tensor& L = f.lower;
    for (std::size_t j = 0; j < n; ++j) {
        double d = m.at(j, j) + ridge;
        for (std::size_t k = 0; k < j; ++k) d -= L.at(j, k) * L.at(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw SingularityError("spd_factor: non-positive pivot at index " + std::to_string(j), j);
        const double ljj = std::sqrt(d);
        L.at(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= L.at(i, k) * L.at(j, k);
            L.at(i, j) = s / ljj;
        }
    }
    return f;
}

void spd_solve_into(const SpdFactor& f, std::span<const double> v, std::span<double> out) {
    const std::size_t n = f.dim;
    if (v.size() != n || out.size() != n)
        throw DimensionError("spd_solve: vector length " + std::to_string(v.size()) +
                             " does not match factor dim " + std::to_string(n));
    const Tensor& L = f.lower;
    // L y = v
    for (std::size_t i = 0; i < n; ++i) {
        double s = v[i];
        for (std::size_t k = 0; k < i; ++k) s -= L.at(i, k) * out[k];
        out[i] = s / L.at(i, i);
    }
    // L^T w = y
    for (std::size_t ii = n; ii-- > 0;) {
        double s = out[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= L.at(k, ii) * out[k];
        out[ii] = s / L.at(ii, ii);
    }
}

Tensor spd_solve(const SpdFactor& f, const Tensor& v) {
    if (v.rank() != 1) throw DimensionError("spd_solve expects a rank-1 tensor");
    Tensor w({f.dim});
    spd_solve_into(f, v.data(), w.data());
    return w;
}

Tensor spd_reconstruct(const SpdFactor& f) {
    return matmul(f.lower, transpose(f.lower));
}

double default_ridge(const Tensor& cov) {
    const std::size_t d = cov.dim(0);
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov.at(i, i);
    return trace > 0.0 ? 1e-6 * trace / static_cast<double>(d) : 1e-6;
}

ClassStats class_stats(std::span<const Tensor> features, std::span<const std::size_t> labels,
                       std::size_t num_classes) {
    if (features.size() != labels.size())
        throw DimensionError("class_stats: feature and label counts differ");
    if (features.size() < 2)
        throw InsufficientDataError("class_stats: need at least 2 samples, got " +
                                    std::to_string(features.size()));
    const std::size_t d = features.front().size();
    std::vector<std::size_t> counts(num_classes, 0);
    ClassStats st;
    st.means.assign(num_classes, Tensor({d}));
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != d) throw DimensionError("class_stats: ragged feature lengths");
        if (labels[i] >= num_classes) throw LabelError("class_stats: label out of range");
        ++counts[labels[i]];
        auto& mu = st.means[labels[i]];
        for (std::size_t j = 0; j < d; ++j) mu[j] += features[i][j];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0)
            throw MissingClassError("class_stats: class " + std::to_string(c) + " has no samples", c);
        for (std::size_t j = 0; j < d; ++j) st.means[c][j] /= static_cast<double>(counts[c]);
    }

    st.tied_cov = Tensor({d, d});
    std::vector<double> r(d);
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& mu = st.means[labels[i]];
        for (std::size_t j = 0; j < d; ++j) r[j] = features[i][j] - mu[j];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b) st.tied_cov.at(a, b) += r[a] * r[b];
    }
    const double inv_n = 1.0 / static_cast<double>(features.size());
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            st.tied_cov.at(a, b) *= inv_n;
            st.tied_cov.at(b, a) = st.tied_cov.at(a, b);
        }
    return st;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("OODT", 4);
    put_le<std::uint32_t>(os, kTensorFormatVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
    for (double v : t.values()) put_le<double>(os, v);
}

Tensor read_tensor(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4) throw CorruptionError("tensor stream truncated");
    if (std::memcmp(magic, "OODT", 4) != 0) throw FormatError("bad tensor magic");
    const auto version = get_le<std::uint32_t>(is);
    if (version != kTensorFormatVersion)
        throw FormatError("unsupported tensor version " + std::to_string(version));
    const auto rank = get_le<std::uint32_t>(is);
    if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    const std::size_t n = shape_size(shape);
    std::vector<double> data(n);
    if (n > 0) {
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (is.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
            throw CorruptionError("tensor payload truncated");
        if constexpr (std::endian::native == std::endian::big) {
            for (auto& v : data) {
                auto bits = std::bit_cast<std::uint64_t>(v);
                bits = __builtin_bswap64(bits);
                v = std::bit_cast<double>(bits);
            }
        }
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
    if (!os) throw DataError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    Tensor t = read_tensor(is);
    if (is.peek() != std::char_traits<char>::eof())
        throw CorruptionError("trailing bytes after tensor in " + path.string());
    return t;
}

}  // namespace oodkit
