#pragma once

#include "elastoreg/blockmatch.hpp"
#include "elastoreg/config.hpp"
#include "elastoreg/elasticity.hpp"
#include "elastoreg/error.hpp"
#include "elastoreg/geometry.hpp"
#include "elastoreg/image.hpp"
#include "elastoreg/io.hpp"
#include "elastoreg/mesh.hpp"
#include "elastoreg/metrics.hpp"
#include "elastoreg/pipeline.hpp"
#include "elastoreg/raster.hpp"
#include "elastoreg/registration.hpp"
#include "elastoreg/regularizers.hpp"
#include "elastoreg/strain.hpp"
#include "elastoreg/tv_band.hpp"
#include "elastoreg/ussim.hpp"
