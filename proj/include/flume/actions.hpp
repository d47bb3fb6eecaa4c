#pragma once

#include <vector>

#include "flume/core.hpp"

namespace flume {

using Action6 = std::array<Real, 6>;

// Piecewise-constant control: one 6-vector per segment, segment_length
// substeps each.
struct ActionTrajectory {
    int n_segments = 1;
    int segment_length = 1;
    std::vector<Action6> values;

    ActionTrajectory() = default;
    ActionTrajectory(int segs, int seg_len)
        : n_segments(segs), segment_length(seg_len), values(size_t(segs), Action6{}) {}

    long horizon() const { return long(n_segments) * segment_length; }
    int segment_of(long substep) const { return int(substep / segment_length); }
    const Action6& at_substep(long substep) const {
        return values[size_t(segment_of(substep))];
    }

    std::vector<Real> flatten() const {
        std::vector<Real> out;
        out.reserve(values.size() * 6);
        for (const Action6& a : values)
            for (Real v : a) out.push_back(v);
        return out;
    }
    void unflatten(const std::vector<Real>& flat) {
        for (size_t s = 0; s < values.size(); s++)
            for (size_t k = 0; k < 6; k++) values[s][k] = flat[s * 6 + k];
    }
};

}  // namespace flume
