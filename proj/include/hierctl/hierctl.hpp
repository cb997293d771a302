#pragma once

#include <hierctl/errors.hpp>
#include <hierctl/mesh.hpp>
#include <hierctl/linalg.hpp>
#include <hierctl/operators.hpp>
#include <hierctl/nash.hpp>
#include <hierctl/hum.hpp>
#include <hierctl/carleman.hpp>
#include <hierctl/expr.hpp>
#include <hierctl/semilinear.hpp>
#include <hierctl/oracle.hpp>
#include <hierctl/config.hpp>
#include <hierctl/io.hpp>
#include <hierctl/runner.hpp>
