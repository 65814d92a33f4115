#pragma once

#include <cassert>
#include <optional>
#include <utility>

namespace mksv::util {

/// Value-or-error carrier used across the protocol and service layers.
/// Deliberately minimal: no exceptions, no monadic combinators.
template <typename T, typename E>
class Result {
  public:
    Result(T value) : value_(std::move(value)) {}
    Result(E error) : error_(error) {}

    bool ok() const { return value_.has_value(); }
    explicit operator bool() const { return ok(); }

    const T& value() const& {
        assert(ok());
        return *value_;
    }
    T& value() & {
        assert(ok());
        return *value_;
    }
    T take() {
        assert(ok());
        return std::move(*value_);
    }
    E error() const {
        assert(!ok());
        return *error_;
    }

  private:
    std::optional<T> value_;
    std::optional<E> error_;
};

template <typename E>
class Result<void, E> {
  public:
    Result() = default;
    Result(E error) : error_(error) {}

    bool ok() const { return !error_.has_value(); }
    explicit operator bool() const { return ok(); }
    E error() const {
        assert(!ok());
        return *error_;
    }

  private:
    std::optional<E> error_;
};

}  // namespace mksv::util
