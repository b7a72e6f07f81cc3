#pragma once

#include "ftopinn/harness.hpp"
