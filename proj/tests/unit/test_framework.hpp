#pragma once

// libtorch's logging header defines glog-style CHECK macros; the test
// framework's assertions must win.
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#include <doctest.h>
