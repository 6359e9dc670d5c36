#pragma once

#include <stdexcept>
#include <string>

namespace multisem {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MULTISEM_DEFINE_ERROR(Name)          \
    class Name : public Error {              \
    public:                                  \
        using Error::Error;                  \
    }

// tensor engine
MULTISEM_DEFINE_ERROR(ShapeMismatch);
MULTISEM_DEFINE_ERROR(EvenKernel);
MULTISEM_DEFINE_ERROR(NotScalar);
MULTISEM_DEFINE_ERROR(DetachedTensor);

// ingestion
MULTISEM_DEFINE_ERROR(MalformedDiff);
MULTISEM_DEFINE_ERROR(IoError);

/// Dataset record that violates the JSONL schema. Carries the 1-based line number.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), m_line(line)
    {
    }
    std::size_t line() const { return m_line; }

private:
    std::size_t m_line;
};

// model and configuration
MULTISEM_DEFINE_ERROR(InvalidConfig);
MULTISEM_DEFINE_ERROR(ConfigMismatch);

// checkpoints
MULTISEM_DEFINE_ERROR(ChecksumMismatch);
MULTISEM_DEFINE_ERROR(VersionUnsupported);
MULTISEM_DEFINE_ERROR(CheckpointFormatError);

// training
MULTISEM_DEFINE_ERROR(DegenerateDataset);

/// Non-finite training loss. Carries the 1-based epoch in which it occurred.
class DivergedLoss : public Error {
public:
    explicit DivergedLoss(std::size_t epoch)
        : Error("training loss diverged (non-finite) in epoch " + std::to_string(epoch)), m_epoch(epoch)
    {
    }
    std::size_t epoch() const { return m_epoch; }

private:
    std::size_t m_epoch;
};

// metrics
MULTISEM_DEFINE_ERROR(SingleClass);

#undef MULTISEM_DEFINE_ERROR

} // namespace multisem
