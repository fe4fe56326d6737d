#pragma once

#include "cfdcam/error.hpp"
#include "cfdcam/tensor.hpp"
#include "cfdcam/random.hpp"
#include "cfdcam/model.hpp"
#include "cfdcam/checkpoint.hpp"
#include "cfdcam/cam.hpp"
#include "cfdcam/multiscale.hpp"
#include "cfdcam/metrics.hpp"
#include "cfdcam/volume_io.hpp"
#include "cfdcam/data.hpp"
#include "cfdcam/dataset.hpp"
#include "cfdcam/train.hpp"
#include "cfdcam/report.hpp"
#include "cfdcam/saliency_io.hpp"
#include "cfdcam/config.hpp"
#include "cfdcam/pipeline.hpp"
