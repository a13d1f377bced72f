#pragma once

#include "vtrace/assembly.hpp"
#include "vtrace/centerline_path.hpp"
#include "vtrace/connected_components.hpp"
#include "vtrace/distance_transform.hpp"
#include "vtrace/eikonal.hpp"
#include "vtrace/error.hpp"
#include "vtrace/local_centerline.hpp"
#include "vtrace/loss.hpp"
#include "vtrace/marching_cubes.hpp"
#include "vtrace/mesh.hpp"
#include "vtrace/metrics.hpp"
#include "vtrace/patch_sampler.hpp"
#include "vtrace/phantom.hpp"
#include "vtrace/rvol_io.hpp"
#include "vtrace/segmenter.hpp"
#include "vtrace/tracer.hpp"
#include "vtrace/vec3.hpp"
#include "vtrace/volume.hpp"
