#include "synb/network.hpp"

namespace synb {

// compiled once here so the header stays template-only for tests
template class Model<float>;
template class Model<double>;

}  // namespace synb
