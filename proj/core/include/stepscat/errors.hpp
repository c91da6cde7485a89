#pragma once

#include <stdexcept>
#include <string>

namespace stepscat {

/// Base class of every numerical or input failure raised by the library.
/// `name()` is the stable identifier surfaced on the CLI diagnostic stream.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& what)
        : std::runtime_error(name + ": " + what), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

#define STEPSCAT_DEFINE_ERROR(Type)                                       \
    class Type : public Error {                                           \
    public:                                                               \
        explicit Type(const std::string& what) : Error(#Type, what) {}    \
    }

STEPSCAT_DEFINE_ERROR(InvalidInput);
STEPSCAT_DEFINE_ERROR(NonIntegrableDeviation);
STEPSCAT_DEFINE_ERROR(BandEdge);
STEPSCAT_DEFINE_ERROR(NoConvergence);
STEPSCAT_DEFINE_ERROR(GrowingChannel);
STEPSCAT_DEFINE_ERROR(DegenerateConnection);
STEPSCAT_DEFINE_ERROR(ScanTooCoarse);
STEPSCAT_DEFINE_ERROR(NotABoundState);
STEPSCAT_DEFINE_ERROR(NotUnitary);
STEPSCAT_DEFINE_ERROR(TailTooShort);
STEPSCAT_DEFINE_ERROR(MethodMismatch);
STEPSCAT_DEFINE_ERROR(IllConditioned);

#undef STEPSCAT_DEFINE_ERROR

}  // namespace stepscat
