#include "bend/error.hpp"
#include "bend/tensor.hpp"

namespace bend {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidConfig: return "invalid config";
        case ErrorKind::InvalidLayer: return "invalid layer";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Size: return "size error";
        case ErrorKind::Io: return "io error";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Version: return "version error";
        case ErrorKind::UnknownAdapter: return "unknown adapter";
        case ErrorKind::DegenerateEmbedding: return "degenerate embedding";
        case ErrorKind::TrainingDiverged: return "training diverged";
    }
    return "error";
}

TrainingDiverged::TrainingDiverged(std::int64_t iteration, double loss)
    : Error(ErrorKind::TrainingDiverged,
            "non-finite loss " + std::to_string(loss) + " at iteration " + std::to_string(iteration)),
      iteration_(iteration), loss_(loss) {}

std::string Tensor4::shape_string() const {
    return "[" + std::to_string(b_) + ", " + std::to_string(c_) + ", " + std::to_string(h_) + ", " +
           std::to_string(w_) + "]";
}

}  // namespace bend
