#pragma once

// The device-API surface slice stacks are written against. Two bindings
// exist: remoting::RemoteDevice (stubs forwarding over control and data
// channels) and remoting::LocalDevice (direct calls into the radio).

#include "pvran/iqcore.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace pvran {

class DeviceError : public std::runtime_error {
public:
    enum class Errc {
        timeout,
        rejected,
        not_established,
        protocol_mismatch,
        end_of_stream,
        out_of_sequence,
        codec,
    };
    DeviceError(Errc code, const std::string& what, std::uint16_t status = 0)
        : std::runtime_error(what), code_(code), status_(status) {}
    Errc code() const { return code_; }
    /// Backend status code for `rejected`.
    std::uint16_t status() const { return status_; }

private:
    Errc code_;
    std::uint16_t status_;
};

std::string to_string(DeviceError::Errc code);

class DeviceApi {
public:
    virtual ~DeviceApi() = default;

    /// Establishes the device for the slice and starts streaming. Returns
    /// the device type.
    virtual std::string find_device() = 0;
    virtual bool established() const = 0;
    virtual const SliceConfig& config() const = 0;

    /// Each setter returns the value the device actually applied.
    virtual std::uint64_t set_rx_freq(std::uint64_t hz) = 0;
    virtual std::uint64_t set_tx_freq(std::uint64_t hz) = 0;
    virtual std::int32_t set_rx_gain(std::int32_t db) = 0;
    virtual std::int32_t set_tx_gain(std::int32_t db) = 0;
    virtual std::uint64_t set_rate(std::uint64_t samples_per_second) = 0;
    /// Accepted and ignored: the simulated radio has a single time source.
    virtual void set_time_source(const std::string& source) = 0;

    /// Next n samples of the receive stream with the tick of the first.
    virtual std::pair<IQBuffer, SampleTimestamp> recv(std::size_t n) = 0;
    /// Submits samples for transmission at `at`, which must continue the
    /// transmit stream (first: first rx tick + tx offset).
    virtual void send(std::span<const IQSample> samples, SampleTimestamp at) = 0;

    virtual void shutdown() = 0;
};

}  // namespace pvran
