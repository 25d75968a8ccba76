#pragma once

#include <stdexcept>
#include <string>

namespace mpk {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MPK_DEFINE_ERROR(name)                                        \
    class name : public Error {                                       \
    public:                                                           \
        explicit name(const std::string& msg) : Error(#name ": " + msg) {} \
    }

MPK_DEFINE_ERROR(IndexOutOfRange);
MPK_DEFINE_ERROR(DegenerateFace);
MPK_DEFINE_ERROR(AtlasLengthMismatch);
MPK_DEFINE_ERROR(InvalidBarycentric);
MPK_DEFINE_ERROR(EmptyTopology);
MPK_DEFINE_ERROR(DisconnectedVertices);
MPK_DEFINE_ERROR(ShapeMismatch);
MPK_DEFINE_ERROR(NonFiniteInput);
MPK_DEFINE_ERROR(VisibilityOutOfRange);
MPK_DEFINE_ERROR(NoLabeledVertices);
MPK_DEFINE_ERROR(MissingComponent);
MPK_DEFINE_ERROR(DegenerateConfiguration);
MPK_DEFINE_ERROR(NoInstances);
MPK_DEFINE_ERROR(EmptyInstance);
MPK_DEFINE_ERROR(EmptyDataset);
MPK_DEFINE_ERROR(DivergedTraining);
MPK_DEFINE_ERROR(UnboundVertex);
MPK_DEFINE_ERROR(NoVisibleSurface);
MPK_DEFINE_ERROR(InvalidConfig);
MPK_DEFINE_ERROR(MissingPredictions);
MPK_DEFINE_ERROR(IoError);

#undef MPK_DEFINE_ERROR

}  // namespace mpk
