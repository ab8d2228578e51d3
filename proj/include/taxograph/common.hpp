#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace taxograph {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using NodeId = std::int64_t;

/// Guard added to norms before dividing (l2 normalization, cosines).
inline constexpr double kNormEps = 1e-12;

/// Error carrying a short machine-readable code ("out-of-range id",
/// "multiple roots", ...) alongside a human readable detail.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail = {})
      : std::runtime_error(detail.empty() ? code : code + ": " + detail),
        code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

namespace detail {

inline std::mutex& warn_mutex() {
  static std::mutex m;
  return m;
}

inline std::function<void(std::string_view)>& warn_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline Matrix gather_rows(const Matrix& z, const std::vector<NodeId>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), z.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = z.row(idx[r]);
  return out;
}

}  // namespace detail

/// Replace the process-wide warning sink. Returns the previous one.
inline std::function<void(std::string_view)> set_warning_sink(
    std::function<void(std::string_view)> sink) {
  std::lock_guard lock(detail::warn_mutex());
  auto old = std::move(detail::warn_sink());
  detail::warn_sink() = std::move(sink);
  return old;
}

inline void warn(std::string_view msg) {
  std::lock_guard lock(detail::warn_mutex());
  if (detail::warn_sink()) detail::warn_sink()(msg);
}

/// Silences warnings for the lifetime of the guard and counts them.
class WarningCapture {
 public:
  WarningCapture()
      : previous_(set_warning_sink([this](std::string_view m) {
          messages_.emplace_back(m);
        })) {}
  ~WarningCapture() { set_warning_sink(std::move(previous_)); }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  std::function<void(std::string_view)> previous_;
};

// 64-bit FNV-1a; used for provenance hashes and cache keys, not security.
inline std::uint64_t fnv1a(std::string_view data,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace taxograph
