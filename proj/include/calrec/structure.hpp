#pragma once

#include "calrec/structure/agglomerative.hpp"
#include "calrec/structure/density.hpp"
#include "calrec/structure/distance.hpp"
#include "calrec/structure/labeling.hpp"
#include "calrec/structure/mixture.hpp"
#include "calrec/structure/outlier.hpp"
#include "calrec/structure/partitional.hpp"
#include "calrec/structure/search.hpp"
