#ifndef CLUSTERSTABLE_ERRORS_HPP
#define CLUSTERSTABLE_ERRORS_HPP

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace clusterstable {

enum class ErrorKind {
  // input / configuration problems
  MissingColumn,
  NonNumericCell,
  SingleCluster,
  EmptyFile,
  InvalidDataset,
  InvalidArgument,
  InvalidGrid,
  AlphaOutOfRange,
  TooFewClusters,
  Io,
  // numerical / degeneracy problems
  SingularGram,
  SingularLeaveOneOutGram,
  ZeroStandardError,
  ZeroSigma,
  ZeroDenominator,
  TooManyDegenerateDraws,
  TooManySingularResamples,
  TooManyFailedReplications,
  GiantCluster,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::SingleCluster: return "SingleCluster";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidGrid: return "InvalidGrid";
    case ErrorKind::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorKind::TooFewClusters: return "TooFewClusters";
    case ErrorKind::Io: return "Io";
    case ErrorKind::SingularGram: return "SingularGram";
    case ErrorKind::SingularLeaveOneOutGram: return "SingularLeaveOneOutGram";
    case ErrorKind::ZeroStandardError: return "ZeroStandardError";
    case ErrorKind::ZeroSigma: return "ZeroSigma";
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::TooManyDegenerateDraws: return "TooManyDegenerateDraws";
    case ErrorKind::TooManySingularResamples: return "TooManySingularResamples";
    case ErrorKind::TooManyFailedReplications: return "TooManyFailedReplications";
    case ErrorKind::GiantCluster: return "GiantCluster";
  }
  return "Unknown";
}

/// Input and configuration errors map to CLI exit code 2, everything else
/// (singular fits, degenerate resampling) to exit code 3.
inline bool is_input_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn:
    case ErrorKind::NonNumericCell:
    case ErrorKind::SingleCluster:
    case ErrorKind::EmptyFile:
    case ErrorKind::InvalidDataset:
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidGrid:
    case ErrorKind::AlphaOutOfRange:
    case ErrorKind::TooFewClusters:
    case ErrorKind::Io:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Optional context, filled where the failing site knows it.
  std::optional<std::size_t> cluster;  // cluster index
  std::optional<std::size_t> row;      // 1-based data row (CSV)
  std::optional<double> condition_number;

 private:
  ErrorKind kind_;
};

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_ERRORS_HPP
