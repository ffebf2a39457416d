// SPDX-License-Identifier: Apache-2.0
//
// Published sea-ice segmentation results (weighted F1, accuracy, precision,
// recall, IoU) per strategy section, used as reference rows.
#pragma once

#include <array>

namespace icefm::reference {

struct PublishedRow {
  const char* section;
  const char* model;
  int channels;
  double f1, acc, prec, rec, iou;
};

inline constexpr std::array<PublishedRow, 59> kSegmentationTable{{
    {"baseline", "U-Net", 2, 0.766, 0.743, 0.899, 0.743, 0.696},
    {"baseline", "DeepLabV3", 2, 0.758, 0.736, 0.928, 0.736, 0.688},
    {"baseline", "U-Net", 3, 0.733, 0.706, 0.865, 0.706, 0.654},
    {"baseline", "DeepLabV3", 3, 0.714, 0.690, 0.840, 0.690, 0.642},
    {"vpt", "CROMA", 2, 0.538, 0.594, 0.858, 0.594, 0.488},
    {"vpt", "DINO-MM", 2, 0.594, 0.598, 0.870, 0.598, 0.522},
    {"vpt", "DOFA", 2, 0.650, 0.617, 0.871, 0.617, 0.560},
    {"vpt", "SARATR-X", 2, 0.662, 0.642, 0.892, 0.642, 0.577},
    {"vpt", "SSL4EO", 2, 0.646, 0.646, 0.852, 0.646, 0.575},
    {"vpt", "FG-MAE", 2, 0.627, 0.613, 0.862, 0.613, 0.544},
    {"vpt", "Prithvi-100M", 3, 0.670, 0.645, 0.862, 0.645, 0.577},
    {"vpt", "Prithvi-300M", 3, 0.714, 0.672, 0.914, 0.672, 0.634},
    {"vpt", "Prithvi-600M", 3, 0.705, 0.656, 0.908, 0.656, 0.626},
    {"vpt", "CMID", 3, 0.568, 0.558, 0.755, 0.558, 0.465},
    {"vpt", "RVSA", 3, 0.682, 0.689, 0.876, 0.688, 0.610},
    {"bitfit", "CROMA", 2, 0.564, 0.547, 0.804, 0.547, 0.470},
    {"bitfit", "DINO-MM", 2, 0.414, 0.428, 0.692, 0.428, 0.336},
    {"bitfit", "DOFA", 2, 0.581, 0.508, 0.797, 0.508, 0.463},
    {"bitfit", "SARATR-X", 2, 0.460, 0.520, 0.713, 0.520, 0.398},
    {"bitfit", "SSL4EO", 2, 0.602, 0.620, 0.868, 0.620, 0.536},
    {"bitfit", "FG-MAE", 2, 0.645, 0.646, 0.875, 0.646, 0.572},
    {"bitfit", "Prithvi-100M", 3, 0.466, 0.559, 0.858, 0.559, 0.420},
    {"bitfit", "Prithvi-300M", 3, 0.666, 0.628, 0.863, 0.726, 0.567},
    {"bitfit", "Prithvi-600M", 3, 0.669, 0.674, 0.853, 0.791, 0.593},
    {"bitfit", "CMID", 3, 0.430, 0.368, 0.699, 0.368, 0.305},
    {"bitfit", "RVSA", 3, 0.373, 0.286, 0.766, 0.286, 0.258},
    {"lora", "CROMA", 2, 0.602, 0.635, 0.846, 0.635, 0.534},
    {"lora", "DINO-MM", 2, 0.523, 0.584, 0.789, 0.584, 0.471},
    {"lora", "DOFA", 2, 0.608, 0.570, 0.845, 0.570, 0.502},
    {"lora", "SARATR-X", 2, 0.649, 0.630, 0.889, 0.630, 0.567},
    {"lora", "SSL4EO", 2, 0.638, 0.638, 0.868, 0.638, 0.563},
    {"lora", "FG-MAE", 2, 0.623, 0.610, 0.870, 0.610, 0.544},
    {"lora", "Prithvi-100M", 3, 0.658, 0.652, 0.867, 0.652, 0.569},
    {"lora", "Prithvi-300M", 3, 0.707, 0.686, 0.905, 0.686, 0.626},
    {"lora", "Prithvi-600M", 3, 0.747, 0.728, 0.933, 0.728, 0.681},
    {"lora", "CMID", 3, 0.594, 0.553, 0.790, 0.553, 0.482},
    {"lora", "RVSA", 3, 0.720, 0.713, 0.905, 0.713, 0.651},
    {"frozen_encoder", "CROMA", 2, 0.496, 0.575, 0.864, 0.575, 0.446},
    {"frozen_encoder", "DINO-MM", 2, 0.470, 0.561, 0.862, 0.561, 0.424},
    {"frozen_encoder", "DOFA", 2, 0.573, 0.590, 0.838, 0.590, 0.497},
    {"frozen_encoder", "SARATR-X", 2, 0.654, 0.613, 0.887, 0.613, 0.550},
    {"frozen_encoder", "SSL4EO", 2, 0.641, 0.639, 0.862, 0.639, 0.562},
    {"frozen_encoder", "FG-MAE", 2, 0.585, 0.593, 0.835, 0.593, 0.504},
    {"frozen_encoder", "Prithvi-100M", 3, 0.714, 0.698, 0.921, 0.698, 0.644},
    {"frozen_encoder", "Prithvi-300M", 3, 0.722, 0.699, 0.920, 0.699, 0.645},
    {"frozen_encoder", "Prithvi-600M", 3, 0.735, 0.722, 0.929, 0.722, 0.671},
    {"frozen_encoder", "CMID", 3, 0.586, 0.560, 0.769, 0.560, 0.482},
    {"frozen_encoder", "RVSA", 3, 0.694, 0.687, 0.888, 0.687, 0.611},
    {"full", "CROMA", 2, 0.761, 0.738, 0.940, 0.738, 0.694},
    {"full", "DINO-MM", 2, 0.591, 0.586, 0.868, 0.586, 0.517},
    {"full", "DOFA", 2, 0.695, 0.683, 0.912, 0.683, 0.622},
    {"full", "SARATR-X", 2, 0.713, 0.687, 0.914, 0.687, 0.632},
    {"full", "SSL4EO", 2, 0.689, 0.661, 0.908, 0.661, 0.610},
    {"full", "FG-MAE", 2, 0.671, 0.620, 0.899, 0.620, 0.580},
    {"full", "Prithvi-100M", 3, 0.721, 0.702, 0.933, 0.702, 0.649},
    {"full", "Prithvi-300M", 3, 0.722, 0.711, 0.922, 0.711, 0.650},
    {"full", "Prithvi-600M", 3, 0.657, 0.663, 0.896, 0.663, 0.579},
    {"full", "CMID", 3, 0.606, 0.589, 0.827, 0.589, 0.506},
    {"full", "RVSA", 3, 0.693, 0.697, 0.903, 0.697, 0.624},
}};

/// Distillation comparison: hard-label U-Net and the distilled student.
inline constexpr double kUnetF1 = 0.766;
inline constexpr double kUnetKdF1 = 0.787;

/// Training-phase accelerator memory (GB) of the largest encoder.
inline constexpr double kFullFtGpuGb = 38.94;
inline constexpr double kFullFtRamGb = 14.21;
inline constexpr double kBitfitGpuGb = 18.47;

}  // namespace icefm::reference
