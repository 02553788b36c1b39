#include "vssl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vssl/parallel.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace vssl {

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t extent : shape) n *= extent;
    return n;
}

namespace {

void check_positive_extents(const Shape& shape) {
    for (int64_t extent : shape) {
        if (extent <= 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    check_positive_extents(shape);
    impl_ = std::make_shared<TensorImpl>();
    impl_->values.assign(static_cast<size_t>(shape_numel(shape)), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
    check_positive_extents(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value) {
    return from_values({1}, {value});
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ShapeError("scalar read on tensor of shape " + shape_str(shape()));
    }
    return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
}

std::vector<double>& Tensor::grad() {
    return detail::ensure_grad(*impl_);
}

double Tensor::grad_at(int64_t i) const {
    if (impl_->grad.empty()) return 0.0;
    return impl_->grad[static_cast<size_t>(i)];
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
}

// ---- graph ---------------------------------------------------------------

namespace {
thread_local Graph* g_active_graph = nullptr;
}

Graph* Graph::active() { return g_active_graph; }

RecordScope::RecordScope(Graph& graph) : previous_(g_active_graph) {
    g_active_graph = &graph;
}

RecordScope::~RecordScope() { g_active_graph = previous_; }

void Graph::record(const char* tag, std::vector<std::shared_ptr<TensorImpl>> inputs,
                   const Tensor& output, std::function<void()> backward) {
    nodes_.push_back(Node{tag, std::move(inputs), output.impl(), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         shape_str(loss.shape()));
    }
    // Fresh grad state for every op output; leaf accumulators persist across
    // calls, which is what makes a second backward double them.
    for (Node& node : nodes_) {
        node.output->grad.clear();
    }
    detail::ensure_grad(*loss.impl())[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // not reachable from loss
        it->backward();
    }
}

void Graph::clear() { nodes_.clear(); }

namespace detail {

std::vector<double>& ensure_grad(TensorImpl& impl) {
    if (impl.grad.empty()) {
        impl.grad.assign(impl.values.size(), 0.0);
    }
    return impl.grad;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!Graph::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void mark_as_op_output(Tensor& out) {
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
}

}  // namespace detail

// ---- elementwise ops -------------------------------------------------------

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    const int64_t n = a.numel();
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

    if (detail::should_record({&a, &b})) {
        detail::mark_as_op_output(out);
        auto ai = a.impl();
        auto bi = b.impl();
        auto oi = out.impl();
        Graph::active()->record("add", {ai, bi}, out, [ai, bi, oi, n] {
            const double* g = oi->grad.data();
            if (ai->requires_grad) {
                double* ga = detail::ensure_grad(*ai).data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bi->requires_grad) {
                double* gb = detail::ensure_grad(*bi).data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    const int64_t n = a.numel();
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];

    if (detail::should_record({&a, &b})) {
        detail::mark_as_op_output(out);
        auto ai = a.impl();
        auto bi = b.impl();
        auto oi = out.impl();
        Graph::active()->record("mul", {ai, bi}, out, [ai, bi, oi, n] {
            const double* g = oi->grad.data();
            if (ai->requires_grad) {
                double* ga = detail::ensure_grad(*ai).data();
                const double* vb = bi->values.data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
            }
            if (bi->requires_grad) {
                double* gb = detail::ensure_grad(*bi).data();
                const double* va = ai->values.data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double factor) {
    const int64_t n = x.numel();
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * factor;

    if (detail::should_record({&x})) {
        detail::mark_as_op_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        Graph::active()->record("scale", {xi}, out, [xi, oi, factor, n] {
            const double* g = oi->grad.data();
            double* gx = detail::ensure_grad(*xi).data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    const int64_t n = x.numel();
    const double* px = x.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor out = Tensor::scalar(acc);

    if (detail::should_record({&x})) {
        detail::mark_as_op_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        Graph::active()->record("sum", {xi}, out, [xi, oi, n] {
            const double g = oi->grad[0];
            double* gx = detail::ensure_grad(*xi).data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    const int64_t n = x.numel();
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    parallel_for(n, [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    });

    if (detail::should_record({&x})) {
        detail::mark_as_op_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        Graph::active()->record("relu", {xi}, out, [xi, oi, n] {
            const double* g = oi->grad.data();
            const double* vx = xi->values.data();
            double* gx = detail::ensure_grad(*xi).data();
            // Subgradient 0 at exactly 0, for determinism. Branchless so the
            // loop vectorizes.
            parallel_for(n, [&](int64_t begin, int64_t end) {
                for (int64_t i = begin; i < end; ++i) {
                    gx[i] += vx[i] > 0.0 ? g[i] : 0.0;
                }
            });
        });
    }
    return out;
}

Tensor log_clamped(const Tensor& x) {
    const int64_t n = x.numel();
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        po[i] = std::log(px[i] < kLogClampMin ? kLogClampMin : px[i]);
    }

    if (detail::should_record({&x})) {
        detail::mark_as_op_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        Graph::active()->record("log", {xi}, out, [xi, oi, n] {
            const double* g = oi->grad.data();
            const double* vx = xi->values.data();
            double* gx = detail::ensure_grad(*xi).data();
            for (int64_t i = 0; i < n; ++i) {
                if (vx[i] >= kLogClampMin) gx[i] += g[i] / vx[i];
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_rows: expected [N,K], got " + shape_str(logits.shape()));
    }
    const int64_t rows = logits.dim(0);
    const int64_t cols = logits.dim(1);
    Tensor out(logits.shape());
    const double* px = logits.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * cols;
        double* yr = po + r * cols;
        double mx = xr[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            denom += yr[c];
        }
        const double inv = 1.0 / denom;
        for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
    }

    if (detail::should_record({&logits})) {
        detail::mark_as_op_output(out);
        auto xi = logits.impl();
        auto oi = out.impl();
        Graph::active()->record("softmax", {xi}, out, [xi, oi, rows, cols] {
            const double* g = oi->grad.data();
            const double* y = oi->values.data();
            double* gx = detail::ensure_grad(*xi).data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = g + r * cols;
                const double* yr = y + r * cols;
                double* gxr = gx + r * cols;
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                for (int64_t c = 0; c < cols; ++c) {
                    gxr[c] += yr[c] * (gr[c] - dot);
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 ||
        x.dim(1) != weight.dim(1) || weight.dim(0) != bias.dim(0)) {
        throw ShapeError("linear: incompatible shapes x=" + shape_str(x.shape()) +
                         " weight=" + shape_str(weight.shape()) +
                         " bias=" + shape_str(bias.shape()));
    }
    const int64_t n = x.dim(0);
    const int64_t d = x.dim(1);
    const int64_t o = weight.dim(0);
    Tensor out({n, o});
    const double* px = x.data();
    const double* pw = weight.data();
    const double* pb = bias.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const double* xr = px + i * d;
        double* yr = po + i * o;
        for (int64_t j = 0; j < o; ++j) {
            const double* wr = pw + j * d;
            double acc = pb[j];
            for (int64_t k = 0; k < d; ++k) acc += xr[k] * wr[k];
            yr[j] = acc;
        }
    }

    if (detail::should_record({&x, &weight, &bias})) {
        detail::mark_as_op_output(out);
        auto xi = x.impl();
        auto wi = weight.impl();
        auto bi = bias.impl();
        auto oi = out.impl();
        Graph::active()->record("linear", {xi, wi, bi}, out, [xi, wi, bi, oi, n, d, o] {
            const double* g = oi->grad.data();
            if (xi->requires_grad) {
                double* gx = detail::ensure_grad(*xi).data();
                const double* w = wi->values.data();
                for (int64_t i = 0; i < n; ++i) {
                    const double* gr = g + i * o;
                    double* gxr = gx + i * d;
                    for (int64_t j = 0; j < o; ++j) {
                        const double gv = gr[j];
                        const double* wr = w + j * d;
                        for (int64_t k = 0; k < d; ++k) gxr[k] += gv * wr[k];
                    }
                }
            }
            if (wi->requires_grad) {
                double* gw = detail::ensure_grad(*wi).data();
                const double* vx = xi->values.data();
                for (int64_t i = 0; i < n; ++i) {
                    const double* gr = g + i * o;
                    const double* xr = vx + i * d;
                    for (int64_t j = 0; j < o; ++j) {
                        const double gv = gr[j];
                        double* gwr = gw + j * d;
                        for (int64_t k = 0; k < d; ++k) gwr[k] += gv * xr[k];
                    }
                }
            }
            if (bi->requires_grad) {
                double* gb = detail::ensure_grad(*bi).data();
                for (int64_t i = 0; i < n; ++i) {
                    const double* gr = g + i * o;
                    for (int64_t j = 0; j < o; ++j) gb[j] += gr[j];
                }
            }
        });
    }
    return out;
}

Tensor rows_slice(const Tensor& x, int64_t row_begin, int64_t row_end) {
    if (x.rank() != 2) {
        throw ShapeError("rows_slice: expected [N,K], got " + shape_str(x.shape()));
    }
    if (row_begin < 0 || row_end > x.dim(0) || row_begin >= row_end) {
        throw ShapeError("rows_slice: rows [" + std::to_string(row_begin) + "," +
                         std::to_string(row_end) + ") out of range for " +
                         shape_str(x.shape()));
    }
    const int64_t cols = x.dim(1);
    const int64_t rows = row_end - row_begin;
    Tensor out({rows, cols});
    std::memcpy(out.data(), x.data() + row_begin * cols,
                static_cast<size_t>(rows * cols) * sizeof(double));

    if (detail::should_record({&x})) {
        detail::mark_as_op_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        Graph::active()->record("rows_slice", {xi}, out,
                                [xi, oi, row_begin, rows, cols] {
            const double* g = oi->grad.data();
            double* gx = detail::ensure_grad(*xi).data() + row_begin * cols;
            for (int64_t i = 0; i < rows * cols; ++i) gx[i] += g[i];
        });
    }
    return out;
}

// ---- serialization ----------------------------------------------------------

namespace {

constexpr char kTensorMagic[5] = {'V', 'S', 'S', 'L', 'T'};
constexpr uint32_t kTensorVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        throw IoError(IoError::Kind::truncated,
                      std::string("truncated stream while reading ") + what);
    }
    return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
    out.write(kTensorMagic, sizeof(kTensorMagic));
    write_pod<uint32_t>(out, kTensorVersion);
    write_pod<uint32_t>(out, static_cast<uint32_t>(tensor.rank()));
    for (int64_t extent : tensor.shape()) {
        write_pod<uint64_t>(out, static_cast<uint64_t>(extent));
    }
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in) {
        throw IoError(IoError::Kind::truncated, "truncated stream while reading tensor magic");
    }
    if (std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
        throw IoError(IoError::Kind::bad_magic, "bad magic: expected VSSLT");
    }
    const auto version = read_pod<uint32_t>(in, "tensor version");
    if (version != kTensorVersion) {
        throw IoError(IoError::Kind::version_mismatch,
                      "tensor version mismatch: expected 1, got " + std::to_string(version));
    }
    const auto rank = read_pod<uint32_t>(in, "tensor rank");
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int64_t>(read_pod<uint64_t>(in, "tensor extent"));
    }
    std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) {
        throw IoError(IoError::Kind::truncated, "truncated stream while reading tensor data");
    }
    return Tensor::from_values(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& tensor) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    write_tensor(out, tensor);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    return read_tensor(in);
}

bool all_finite(const Tensor& tensor) {
    for (double v : tensor.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace vssl
