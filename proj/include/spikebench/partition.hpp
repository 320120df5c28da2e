// Mapping converted networks onto simulated neuro-cores under per-core
// resource budgets.
//
// Cost model: every neuron takes one compartment; its fan-in axons are its
// distinct presynaptic sources and its fan-out axons its distinct targets;
// synapse memory is fan_in * (weight_bits + overhead) bits rounded up to
// bytes. Within a core, axons to/from the same peer are shared (counted once
// per core), while compartments and synapse memory accumulate per neuron.
#pragma once

#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spikebench/snn.hpp"

namespace sb::partition {

struct CoreBudget {
    std::size_t compartments = 1024;
    std::size_t fan_in_axons = 4096;
    std::size_t fan_out_axons = 4096;
    std::size_t synapse_memory_bytes = 128 * 1024;
    int weight_bits = 8;
    int synapse_overhead_bits = 12;  // routing metadata per synapse; configurable

    void validate() const {
        if (compartments == 0 || fan_in_axons == 0 || fan_out_axons == 0 || synapse_memory_bytes == 0)
            throw ArgumentError("CoreBudget: all budgets must be positive");
    }
};

struct NeuronCost {
    std::size_t compartments = 1;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t memory_bytes = 0;
};

inline std::size_t synapse_bytes(std::size_t fan_in, const CoreBudget& budget) {
    const std::size_t bits = fan_in * static_cast<std::size_t>(budget.weight_bits + budget.synapse_overhead_bits);
    return (bits + 7) / 8;
}

// Per-neuron resource vector for one layer. `next` supplies outgoing
// connectivity; the final layer has fan-out 0.
inline std::vector<NeuronCost> estimate_core_cost(const snn::Runtime::Layer& layer,
                                                  const snn::Runtime::Layer* next, const CoreBudget& budget) {
    std::vector<NeuronCost> costs(layer.n_out);
    for (const auto dst : layer.col) costs[dst].fan_in++;
    if (next)
        for (std::size_t n = 0; n < layer.n_out; ++n)
            costs[n].fan_out = next->row_ptr[n + 1] - next->row_ptr[n];
    for (auto& c : costs) c.memory_bytes = synapse_bytes(c.fan_in, budget);
    return costs;
}

struct CoreAssignment {
    std::size_t layer = 0;
    std::size_t first_neuron = 0, neuron_count = 0;
    std::size_t compartments = 0, fan_in_axons = 0, fan_out_axons = 0, memory_bytes = 0;
};

struct LayerPartition {
    std::string name;
    std::size_t neurons = 0;
    std::size_t cores = 0;
    std::string binding;  // constraint that forced core splits ("-" if one core)
};

struct PartitionPlan {
    std::vector<CoreAssignment> cores;
    std::vector<LayerPartition> per_layer;
    std::size_t total_cores = 0;
};

namespace detail {

// target-indexed adjacency (sources per neuron), built once per layer
inline std::vector<std::vector<std::uint32_t>> sources_per_neuron(const snn::Runtime::Layer& layer) {
    std::vector<std::vector<std::uint32_t>> srcs(layer.n_out);
    std::vector<std::size_t> indeg(layer.n_out, 0);
    for (const auto dst : layer.col) indeg[dst]++;
    for (std::size_t n = 0; n < layer.n_out; ++n) srcs[n].reserve(indeg[n]);
    for (std::uint32_t s = 0; s + 1 < layer.row_ptr.size(); ++s)
        for (std::uint32_t k = layer.row_ptr[s]; k < layer.row_ptr[s + 1]; ++k) srcs[layer.col[k]].push_back(s);
    return srcs;
}

} // namespace detail

// Greedy first-fit per layer in neuron order: a new core opens whenever
// adding the next neuron would exceed any budget. Deterministic.
inline PartitionPlan partition_network(const snn::Runtime& rt, const CoreBudget& budget) {
    budget.validate();
    PartitionPlan plan;
    const auto& layers = rt.layers();

    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& L = layers[li];
        const auto* next = (li + 1 < layers.size()) ? &layers[li + 1] : nullptr;
        const auto srcs = detail::sources_per_neuron(L);

        // membership stamps for the running core's source/target unions
        std::vector<std::size_t> src_stamp(L.n_in, static_cast<std::size_t>(-1));
        std::vector<std::size_t> dst_stamp(next ? next->n_out : 0, static_cast<std::size_t>(-1));
        std::size_t core_id = 0;

        LayerPartition lp;
        lp.name = L.name;
        lp.neurons = L.n_out;
        lp.binding = "-";
        std::map<std::string, std::size_t> close_reasons;

        CoreAssignment core;
        core.layer = li;
        auto flush_core = [&] {
            if (core.compartments > 0) {
                plan.cores.push_back(core);
                lp.cores++;
            }
        };

        for (std::size_t n = 0; n < L.n_out; ++n) {
            const std::size_t fan_in = srcs[n].size();
            const std::size_t fan_out = next ? next->row_ptr[n + 1] - next->row_ptr[n] : 0;
            const std::size_t mem = synapse_bytes(fan_in, budget);

            if (fan_in > budget.fan_in_axons || fan_out > budget.fan_out_axons ||
                mem > budget.synapse_memory_bytes) {
                const char* which = fan_in > budget.fan_in_axons      ? "fan_in_axons"
                                    : fan_out > budget.fan_out_axons ? "fan_out_axons"
                                                                     : "synapse_memory";
                throw Error("partition: neuron " + std::to_string(n) + " of layer " + L.name +
                            " exceeds the per-core budget (" + which + "); network is infeasible");
            }

            // count only sources/targets not already on this core
            std::size_t new_in = 0, new_out = 0;
            for (const auto s : srcs[n])
                if (src_stamp[s] != core_id) ++new_in;
            if (next)
                for (std::uint32_t k = next->row_ptr[n]; k < next->row_ptr[n + 1]; ++k)
                    if (dst_stamp[next->col[k]] != core_id) ++new_out;

            std::string reason;
            if (core.compartments + 1 > budget.compartments) reason = "compartments";
            else if (core.fan_in_axons + new_in > budget.fan_in_axons) reason = "fan_in_axons";
            else if (core.fan_out_axons + new_out > budget.fan_out_axons) reason = "fan_out_axons";
            else if (core.memory_bytes + mem > budget.synapse_memory_bytes) reason = "synapse_memory";

            if (!reason.empty()) {
                close_reasons[reason]++;
                flush_core();
                core = CoreAssignment{};
                core.layer = li;
                core.first_neuron = n;
                ++core_id;  // fresh core: nothing shared yet
                new_in = fan_in;
                new_out = fan_out;
            }

            if (core.compartments == 0) core.first_neuron = n;
            core.compartments++;
            core.neuron_count++;
            core.fan_in_axons += new_in;
            core.fan_out_axons += new_out;
            core.memory_bytes += mem;
            for (const auto s : srcs[n]) src_stamp[s] = core_id;
            if (next)
                for (std::uint32_t k = next->row_ptr[n]; k < next->row_ptr[n + 1]; ++k)
                    dst_stamp[next->col[k]] = core_id;
        }
        flush_core();

        if (!close_reasons.empty()) {
            std::size_t best = 0;
            for (const auto& [r, c] : close_reasons)
                if (c > best) {
                    best = c;
                    lp.binding = r;
                }
        }
        plan.per_layer.push_back(lp);
    }

    plan.total_cores = plan.cores.size();
    return plan;
}

// Post-hoc audit: recompute utilization per core from the connectivity and
// check every budget plus the exactly-once assignment. Returns violation
// descriptions (empty means the plan is feasible).
inline std::vector<std::string> audit_plan(const PartitionPlan& plan, const snn::Runtime& rt,
                                           const CoreBudget& budget) {
    std::vector<std::string> violations;
    const auto& layers = rt.layers();
    std::vector<std::vector<int>> seen(layers.size());
    for (std::size_t li = 0; li < layers.size(); ++li) seen[li].assign(layers[li].n_out, 0);

    for (std::size_t ci = 0; ci < plan.cores.size(); ++ci) {
        const auto& core = plan.cores[ci];
        const auto& L = layers[core.layer];
        const auto* next = (core.layer + 1 < layers.size()) ? &layers[core.layer + 1] : nullptr;
        const auto srcs = detail::sources_per_neuron(L);

        std::vector<std::uint8_t> in_seen(L.n_in, 0), out_seen(next ? next->n_out : 0, 0);
        std::size_t comp = 0, mem = 0, in_axons = 0, out_axons = 0;
        for (std::size_t n = core.first_neuron; n < core.first_neuron + core.neuron_count; ++n) {
            seen[core.layer][n]++;
            ++comp;
            mem += synapse_bytes(srcs[n].size(), budget);
            for (const auto s : srcs[n])
                if (!in_seen[s]) {
                    in_seen[s] = 1;
                    ++in_axons;
                }
            if (next)
                for (std::uint32_t k = next->row_ptr[n]; k < next->row_ptr[n + 1]; ++k)
                    if (!out_seen[next->col[k]]) {
                        out_seen[next->col[k]] = 1;
                        ++out_axons;
                    }
        }
        auto fail = [&](const std::string& what, std::size_t used, std::size_t cap) {
            violations.push_back("core " + std::to_string(ci) + " (" + L.name + "): " + what + " " +
                                 std::to_string(used) + " > " + std::to_string(cap));
        };
        if (comp > budget.compartments) fail("compartments", comp, budget.compartments);
        if (in_axons > budget.fan_in_axons) fail("fan_in_axons", in_axons, budget.fan_in_axons);
        if (out_axons > budget.fan_out_axons) fail("fan_out_axons", out_axons, budget.fan_out_axons);
        if (mem > budget.synapse_memory_bytes) fail("synapse_memory", mem, budget.synapse_memory_bytes);
    }

    for (std::size_t li = 0; li < layers.size(); ++li)
        for (std::size_t n = 0; n < layers[li].n_out; ++n)
            if (seen[li][n] != 1)
                violations.push_back("neuron " + std::to_string(n) + " of " + layers[li].name + " assigned " +
                                     std::to_string(seen[li][n]) + " times");
    return violations;
}

// Resource-wise lower bound on one layer's core count: every core caps each
// budget, sources/targets must at least be covered once, and memory and
// compartments accumulate exactly.
inline std::size_t layer_core_lower_bound(const snn::Runtime& rt, std::size_t layer_index,
                                          const CoreBudget& budget) {
    const auto& L = rt.layers()[layer_index];
    const auto* next = (layer_index + 1 < rt.layers().size()) ? &rt.layers()[layer_index + 1] : nullptr;

    std::vector<std::uint8_t> src_used(L.n_in, 0);
    std::size_t total_mem = 0, distinct_sources = 0;
    {
        const auto srcs = detail::sources_per_neuron(L);
        for (std::size_t n = 0; n < L.n_out; ++n) total_mem += synapse_bytes(srcs[n].size(), budget);
    }
    for (std::uint32_t s = 0; s + 1 < L.row_ptr.size(); ++s)
        if (L.row_ptr[s + 1] > L.row_ptr[s] && !src_used[s]) {
            src_used[s] = 1;
            ++distinct_sources;
        }
    std::size_t distinct_targets = 0;
    if (next) {
        std::vector<std::uint8_t> dst_used(next->n_out, 0);
        for (std::size_t n = 0; n < L.n_out; ++n)
            for (std::uint32_t k = next->row_ptr[n]; k < next->row_ptr[n + 1]; ++k)
                if (!dst_used[next->col[k]]) {
                    dst_used[next->col[k]] = 1;
                    ++distinct_targets;
                }
    }
    auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
    std::size_t lb = ceil_div(L.n_out, budget.compartments);
    lb = std::max(lb, ceil_div(total_mem, budget.synapse_memory_bytes));
    lb = std::max(lb, ceil_div(distinct_sources, budget.fan_in_axons));
    lb = std::max(lb, ceil_div(distinct_targets, budget.fan_out_axons));
    return lb;
}

inline std::size_t check_chip_fit(const PartitionPlan& plan, std::size_t cores_per_chip = 128) {
    if (cores_per_chip == 0) throw ArgumentError("check_chip_fit: cores_per_chip must be positive");
    return (plan.total_cores + cores_per_chip - 1) / cores_per_chip;
}

// Structured-text report; `reference` optionally adds published core counts
// per layer name for side-by-side comparison (not a target).
inline std::string plan_report(const PartitionPlan& plan,
                               const std::map<std::string, std::size_t>* reference = nullptr) {
    std::ostringstream os;
    os << "layer neurons cores binding";
    if (reference) os << " reference_cores";
    os << "\n";
    for (const auto& lp : plan.per_layer) {
        os << lp.name << " " << lp.neurons << " " << lp.cores << " " << lp.binding;
        if (reference) {
            auto it = reference->find(lp.name);
            os << " " << (it == reference->end() ? std::string("-") : std::to_string(it->second));
        }
        os << "\n";
    }
    os << "total - " << plan.total_cores << " -";
    if (reference) {
        std::size_t ref_total = 0;
        for (const auto& [k, v] : *reference) ref_total += v;
        os << " " << ref_total;
    }
    os << "\nchips " << check_chip_fit(plan) << "\n";
    return os.str();
}

inline void plan_csv(const PartitionPlan& plan, std::ostream& os) {
    os << "layer,neurons,cores,binding\n";
    for (const auto& lp : plan.per_layer) os << lp.name << "," << lp.neurons << "," << lp.cores << "," << lp.binding << "\n";
    os << "total,," << plan.total_cores << ",\n";
}

} // namespace sb::partition
