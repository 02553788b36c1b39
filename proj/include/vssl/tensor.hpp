#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vssl {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Thrown when tensor extents do not line up; the message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    enum class Kind { open_failed, bad_magic, version_mismatch, truncated };

    IoError(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
};

// Dense f64 tensor, row-major, shared-storage value handle. All arithmetic in
// this project runs in 64-bit so that finite-difference checks and the naive
// reference kernels agree to tight tolerances.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

    static Tensor from_values(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

    double* data() { return impl_->values.data(); }
    const double* data() const { return impl_->values.data(); }
    std::vector<double>& values() { return impl_->values; }
    const std::vector<double>& values() const { return impl_->values; }

    // Scalar read; requires numel() == 1.
    double value() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag);

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Grad buffer, allocated to zeros on first use.
    std::vector<double>& grad();
    const std::vector<double>& grad() const { return impl_->grad; }
    double grad_at(int64_t i) const;
    void zero_grad();

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops append nodes while a graph is active (RecordScope);
// insertion order is a topological order by construction, and backward walks
// it in reverse exactly once.
class Graph {
public:
    struct Node {
        const char* tag;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        std::function<void()> backward;
    };

    static Graph* active();

    void record(const char* tag, std::vector<std::shared_ptr<TensorImpl>> inputs,
                const Tensor& output, std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // reachable leaf. Non-leaf grad buffers are reset first, so calling this
    // twice without zero_grad doubles every leaf gradient exactly.
    void backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    friend class RecordScope;
    std::vector<Node> nodes_;
};

class RecordScope {
public:
    explicit RecordScope(Graph& graph);
    ~RecordScope();

    RecordScope(const RecordScope&) = delete;
    RecordScope& operator=(const RecordScope&) = delete;

private:
    Graph* previous_;
};

namespace detail {
// Zero-initialises the grad buffer if absent and returns it.
std::vector<double>& ensure_grad(TensorImpl& impl);
bool should_record(std::initializer_list<const Tensor*> inputs);
void mark_as_op_output(Tensor& out);
}  // namespace detail

// ---- elementwise / reduction ops -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum_all(const Tensor& x);
Tensor relu(const Tensor& x);

// log(max(x, 1e-12)); the clamp keeps saturated probabilities finite without
// moving any value a test can observe.
Tensor log_clamped(const Tensor& x);
inline constexpr double kLogClampMin = 1e-12;

// Row-wise softmax over [N, K], max-shifted.
Tensor softmax_rows(const Tensor& logits);

// x:[N,D] w:[O,D] b:[O] -> [N,O]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Copy of rows [row_begin, row_end) of a [N, K] tensor; backward scatters.
Tensor rows_slice(const Tensor& x, int64_t row_begin, int64_t row_end);

// ---- convolution / pooling ops ----------------------------------------------

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<int64_t, 3> stride, std::array<int64_t, 3> padding);

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<int64_t, 2> stride, std::array<int64_t, 2> padding);

enum class PoolMode { max, mean };

Tensor pool3d(const Tensor& input, PoolMode mode, std::array<int64_t, 3> window,
              std::array<int64_t, 3> stride);

// [N,C,T,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool2d(const Tensor& input);

// ---- serialization -----------------------------------------------------------

// Binary tensor format: magic "VSSLT", u32 version=1, u32 rank,
// u64 extents[rank], f64 elements row-major, all little-endian.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& tensor);
Tensor load_tensor(const std::string& path);

bool all_finite(const Tensor& tensor);

}  // namespace vssl
