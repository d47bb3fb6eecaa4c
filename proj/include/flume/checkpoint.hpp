#pragma once

#include <map>

#include "flume/types.hpp"

namespace flume {

// In-memory snapshot store for the backward sweep: states at multiples of the
// stride, replayed forward to rebuild any segment bit-exactly.
template <int D>
class CheckpointStore {
public:
    explicit CheckpointStore(long stride = 1) : stride_(std::max(stride, 1l)) {}

    long stride() const { return stride_; }
    size_t size() const { return snapshots_.size(); }

    void save(long index, const SimState<D>& state) {
        if (index % stride_ != 0)
            throw EngineError("checkpoint_save: index " + std::to_string(index) +
                              " is not a stride multiple");
        snapshots_[index] = state;
    }

    const SimState<D>& restore(long index) const {
        auto it = snapshots_.find(index);
        if (it == snapshots_.end())
            throw EngineError("checkpoint_restore: no snapshot at index " +
                              std::to_string(index));
        return it->second;
    }

    bool has(long index) const { return snapshots_.count(index) > 0; }

    // Largest saved index <= the requested one.
    long nearest_at_or_before(long index) const {
        auto it = snapshots_.upper_bound(index);
        if (it == snapshots_.begin())
            throw EngineError("checkpoint store has no snapshot before " +
                              std::to_string(index));
        return std::prev(it)->first;
    }

    void clear() { snapshots_.clear(); }

private:
    long stride_;
    std::map<long, SimState<D>> snapshots_;
};

}  // namespace flume
