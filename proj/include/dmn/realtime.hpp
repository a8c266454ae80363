#pragma once

// Wall-clock emission. A clock thread produces items, sleeps until each one's
// scheduled time and hands it to the consumer through a bounded queue; the
// clock thread blocks while the consumer lags by a full queue.

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fcntl.h>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dmn {

inline constexpr std::size_t kRealtimeQueueCapacity = 10000;

template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : cap_(capacity) {
    if (capacity == 0) throw std::invalid_argument("queue capacity must be positive");
  }

  /// Blocks while full. Returns false once the queue is closed.
  bool push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < cap_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  /// Blocks until an item arrives; empty once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t capacity() const { return cap_; }

 private:
  std::size_t cap_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> items_;
  bool closed_ = false;
};

struct LatenessStats {
  std::size_t count = 0;
  double sum_ms = 0.0;
  double max_ms = 0.0;
  std::size_t over_budget = 0;  // releases later than budget_ms
  double budget_ms = 50.0;

  void record(double ms) {
    ++count;
    sum_ms += ms;
    max_ms = std::max(max_ms, ms);
    if (ms > budget_ms) ++over_budget;
  }
  double mean_ms() const { return count ? sum_ms / static_cast<double>(count) : 0.0; }
};

/// Maps simulated seconds onto the steady clock: wall = origin + (sim - sim_origin) / scale.
class Pacer {
 public:
  using Clock = std::chrono::steady_clock;

  Pacer(double sim_origin, double time_scale, Clock::time_point wall_origin = Clock::now())
      : sim0_(sim_origin), scale_(time_scale), wall0_(wall_origin) {
    if (!(time_scale > 0.0)) throw std::invalid_argument("time_scale must be positive");
  }

  Clock::time_point due(double sim_time) const {
    const double s = (sim_time - sim0_) / scale_;
    return wall0_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(s));
  }

  /// Sleeps until sim_time is due, waking periodically to honour stop.
  /// Returns lateness in ms, or nullopt if stopped first.
  std::optional<double> wait(double sim_time, const std::atomic<bool>& stop) const {
    const auto target = due(sim_time);
    while (true) {
      if (stop.load(std::memory_order_relaxed)) return std::nullopt;
      const auto now = Clock::now();
      if (now >= target) return std::chrono::duration<double, std::milli>(now - target).count();
      std::this_thread::sleep_until(std::min(target, now + std::chrono::milliseconds(100)));
    }
  }

 private:
  double sim0_;
  double scale_;
  Clock::time_point wall0_;
};

template <class T>
struct Timed {
  double sim_time;
  T item;
};

/// Runs next() on a clock thread and consume() on the caller's thread until
/// next() is exhausted or stop is raised. Items already released are always
/// consumed before returning.
template <class T>
LatenessStats run_paced(const std::function<std::optional<Timed<T>>()>& next, const std::function<void(T&)>& consume,
                        double sim_origin, double time_scale, const std::atomic<bool>& stop,
                        std::size_t capacity = kRealtimeQueueCapacity) {
  BoundedQueue<T> queue(capacity);
  const Pacer pacer(sim_origin, time_scale);
  LatenessStats stats;
  std::exception_ptr failure;
  std::thread clock([&] {
    try {
      while (!stop.load(std::memory_order_relaxed)) {
        auto t = next();
        if (!t) break;
        const auto late = pacer.wait(t->sim_time, stop);
        if (!late) break;
        stats.record(*late);
        if (!queue.push(std::move(t->item))) break;
      }
    } catch (...) {
      failure = std::current_exception();
    }
    queue.close();
  });
  try {
    while (auto item = queue.pop()) consume(*item);
  } catch (...) {
    queue.close();
    clock.join();
    throw;
  }
  clock.join();
  if (failure) std::rethrow_exception(failure);
  return stats;
}

// ---------------------------------------------------------------------------
// Line sinks
// ---------------------------------------------------------------------------

class LineSink {
 public:
  virtual ~LineSink() = default;
  virtual void write(const std::string& line) = 0;
};

class StreamSink : public LineSink {
 public:
  explicit StreamSink(std::ostream& out) : out_(&out) {}
  void write(const std::string& line) override { *out_ << line << '\n' << std::flush; }

 private:
  std::ostream* out_;
};

/// Listens on a unix-domain socket and broadcasts each line to every client
/// connected at that moment. Clients that hang up are dropped.
class UnixSocketSink : public LineSink {
 public:
  explicit UnixSocketSink(std::string path) : path_(std::move(path)) {
    sockaddr_un addr{};
    if (path_.size() >= sizeof(addr.sun_path)) throw std::runtime_error("socket path too long: " + path_);
    fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("socket(): " + std::string(std::strerror(errno)));
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, path_.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 16) != 0) {
      const std::string why = std::strerror(errno);
      ::close(fd_);
      throw std::runtime_error("cannot bind " + path_ + ": " + why);
    }
    ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL) | O_NONBLOCK);
  }
  ~UnixSocketSink() override {
    for (int c : clients_) ::close(c);
    ::close(fd_);
    ::unlink(path_.c_str());
  }
  UnixSocketSink(const UnixSocketSink&) = delete;
  UnixSocketSink& operator=(const UnixSocketSink&) = delete;

  void write(const std::string& line) override {
    accept_pending();
    const std::string msg = line + '\n';
    std::erase_if(clients_, [&](int c) {
      std::size_t off = 0;
      while (off < msg.size()) {
        const auto n = ::send(c, msg.data() + off, msg.size() - off, MSG_NOSIGNAL);
        if (n <= 0) {
          ::close(c);
          return true;
        }
        off += static_cast<std::size_t>(n);
      }
      return false;
    });
  }

  std::size_t clients() {
    accept_pending();
    return clients_.size();
  }

 private:
  void accept_pending() {
    for (int c; (c = ::accept(fd_, nullptr, nullptr)) >= 0;) clients_.push_back(c);
  }

  std::string path_;
  int fd_ = -1;
  std::vector<int> clients_;
};

/// Resident set size in bytes (Linux), 0 when unavailable.
inline std::size_t resident_bytes() {
  std::ifstream in("/proc/self/statm");
  std::size_t pages = 0, resident = 0;
  if (!(in >> pages >> resident)) return 0;
  return resident * static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
}

}  // namespace dmn
