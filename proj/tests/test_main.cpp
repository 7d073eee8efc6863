// License: Apache 2.0. See LICENSE file in root directory.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
