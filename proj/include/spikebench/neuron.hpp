// Loihi-style compartment parameters (CUBA LIF, soft reset).
#pragma once

#include <cstdint>

#include "spikebench/common.hpp"

namespace sb::snn {

struct NeuronConfig {
    // reset mode is fixed to soft: on spiking, vTh is subtracted from v
    double threshold_input_ratio = 1.0;  // held fixed; balances vTh against input swing
    int bias_exponent = 6;               // bias = mantissa * 2^bias_exponent
    std::int32_t vth_mantissa = 512;     // vTh = vth_mantissa * 2^6
    std::int32_t voltage_decay = 0;      // of 4096
    std::int32_t current_decay = 4095;   // of 4096
    std::int32_t refractory_delay = 1;   // timesteps spiking is suppressed after a spike
    int functional_state = 2;            // idle integration awaiting stimulus

    std::int64_t vth() const { return static_cast<std::int64_t>(vth_mantissa) << 6; }

    void validate() const {
        if (voltage_decay < 0 || voltage_decay > 4096 || current_decay < 0 || current_decay > 4096)
            throw ArgumentError("NeuronConfig: decays must lie in [0,4096]");
        if (vth_mantissa <= 0) throw ArgumentError("NeuronConfig: vth_mantissa must be positive");
        if (refractory_delay < 0) throw ArgumentError("NeuronConfig: refractory_delay must be >= 0");
    }
};

struct CompartmentState {
    std::int32_t u = 0;  // synaptic current accumulator
    std::int32_t v = 0;  // membrane potential
    std::int32_t refractory_remaining = 0;
};

} // namespace sb::snn
