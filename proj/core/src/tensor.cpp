#include "anymodal/tensor.hpp"

#include <sstream>

namespace am::nn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

void op_error(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

namespace detail {

int& nograd_depth() {
  thread_local int depth = 0;
  return depth;
}

template <typename T>
void*& active_tape_slot() {
  thread_local void* slot = nullptr;
  return slot;
}

template void*& active_tape_slot<float>();
template void*& active_tape_slot<double>();

}  // namespace detail
}  // namespace am::nn
