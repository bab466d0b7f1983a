#pragma once

#include <stdexcept>
#include <string>

namespace tissuegraph {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Input is well-formed but carries too little information (e.g. a
/// single-valued histogram, zero pooled variance).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

class NoTissueFound : public Error {
public:
    using Error::Error;
};

class CorruptTrace : public Error {
public:
    using Error::Error;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class Divergence : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace tissuegraph
