#pragma once

#include <stdexcept>
#include <string>

namespace vsopf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// case parsing / validation
struct MissingSection : Error {
    explicit MissingSection(const std::string& name)
        : Error("missing required section: " + name), section(name) {}
    std::string section;
};

struct MalformedRow : Error {
    MalformedRow(const std::string& section_, int line_, const std::string& what_)
        : Error("malformed row in " + section_ + " (line " + std::to_string(line_) + "): " + what_),
          section(section_), line(line_) {}
    std::string section;
    int line;
};

struct Disconnected : Error {
    explicit Disconnected(int components_)
        : Error("in-service network splits into " + std::to_string(components_) + " components"),
          components(components_) {}
    int components;
};

struct NoSlack : Error {
    explicit NoSlack(const std::string& detail = "no slack (type 3) bus present")
        : Error(detail) {}
};

struct UnsupportedCost : Error {
    explicit UnsupportedCost(const std::string& detail) : Error(detail) {}
};

// network model
struct ZeroImpedanceBranch : Error {
    ZeroImpedanceBranch(int from_, int to_)
        : Error("branch " + std::to_string(from_) + "-" + std::to_string(to_) +
                " has r = x = 0"),
          from(from_), to(to_) {}
    int from, to;
};

struct SingularYLL : Error {
    SingularYLL() : Error("load-bus admittance block Y_LL is singular") {}
};

// power flow
struct Diverged : Error {
    Diverged(int iterations_, double mismatch_)
        : Error("power flow did not converge after " + std::to_string(iterations_) +
                " iterations (max mismatch " + std::to_string(mismatch_) + ")"),
          iterations(iterations_), mismatch(mismatch_) {}
    int iterations;
    double mismatch;
};

struct SingularJacobian : Error {
    SingularJacobian() : Error("Newton system is numerically singular") {}
};

struct BaseCaseDiverged : Error {
    BaseCaseDiverged() : Error("power flow diverges already at multiplier 1") {}
};

// stability index
struct ZeroVoltage : Error {
    explicit ZeroVoltage(int bus_)
        : Error("zero voltage magnitude at bus " + std::to_string(bus_)), bus(bus_) {}
    int bus;
};

struct ZeroSendingVoltage : Error {
    ZeroSendingVoltage() : Error("sending-end voltage magnitude is zero") {}
};

// formulation / analysis
struct InfeasibleBounds : Error {
    explicit InfeasibleBounds(int bus_)
        : Error("voltage bounds cross at bus " + std::to_string(bus_)), bus(bus_) {}
    int bus;
};

struct NonpositiveMagnitude : Error {
    explicit NonpositiveMagnitude(int bus_)
        : Error("nonpositive squared magnitude at bus " + std::to_string(bus_)), bus(bus_) {}
    int bus;
};

struct NonpositiveUpperBound : Error {
    NonpositiveUpperBound() : Error("upper bound must be positive to form a gap") {}
};

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& detail) : Error(detail) {}
};

struct SolveFailed : Error {
    SolveFailed(const std::string& context, const std::string& status_)
        : Error(context + " solve ended " + status_), status(status_) {}
    std::string status;
};

}  // namespace vsopf
