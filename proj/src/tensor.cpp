#include "ircnn/tensor.hpp"

namespace ircnn {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

std::string_view dtype_name(DType d) {
    return d == DType::f32 ? "f32" : "f64";
}

} // namespace ircnn
