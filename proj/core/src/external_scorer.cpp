#include "qad/external_scorer.hpp"

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "qad/error.hpp"

extern char** environ;

namespace qad {

namespace {

constexpr std::string_view kHandshakeMagic = "QAD-SCORER";
constexpr std::size_t kMaxStderr = 8192;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

std::string describe_status(int status) {
  if (WIFEXITED(status)) return "exit status " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
  return "unknown status";
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

}  // namespace

std::string escape_field(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (char c : field) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] == '\\' && i + 1 < field.size()) {
      const char n = field[++i];
      out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
    } else {
      out += field[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ExternalScorer::ExternalScorer(ExternalScorerConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.command.empty()) throw ValidationError("external scorer command is empty");
  if (cfg_.batch_size < 1) throw ValidationError("scorer batch_size must be >= 1");
  if (!(cfg_.timeout_seconds > 0.0)) throw ValidationError("scorer timeout must be > 0");
  launch();

  const std::string line = read_line(now_seconds() + cfg_.timeout_seconds, 0);
  // QAD-SCORER 1 <name> <ref|noref>
  std::vector<std::string_view> parts;
  std::string_view rest = trim(line);
  while (!rest.empty()) {
    const auto sp = rest.find(' ');
    parts.push_back(rest.substr(0, sp));
    if (sp == std::string_view::npos) break;
    rest = trim(rest.substr(sp + 1));
  }
  if (parts.size() != 4 || parts[0] != kHandshakeMagic || parts[1] != "1" ||
      (parts[3] != "ref" && parts[3] != "noref")) {
    fail(static_cast<int>(ScorerError::Reason::kProtocol),
         "bad handshake from scorer: '" + line + "'");
  }
  name_ = std::string(parts[2]);
  kind_ = parts[3] == "ref" ? MetricKind::kReferenceBased : MetricKind::kReferenceFree;
}

ExternalScorer::~ExternalScorer() { shutdown(); }

void ExternalScorer::launch() {
  // A scorer that dies mid-write must surface as an error, not SIGPIPE.
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0 ||
      pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw ScorerError(ScorerError::Reason::kLaunch,
                      std::string("pipe failed: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);

  std::vector<char*> argv;
  for (auto& a : cfg_.command) argv.push_back(a.data());
  argv.push_back(nullptr);

  const int rc = posix_spawnp(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  stdin_fd_ = in_pipe[1];
  stdout_fd_ = out_pipe[0];
  stderr_fd_ = err_pipe[0];
  if (rc != 0) {
    pid_ = -1;
    shutdown();
    throw ScorerError(ScorerError::Reason::kLaunch,
                      "cannot launch scorer '" + cfg_.command.front() +
                          "': " + std::strerror(rc));
  }
  set_nonblocking(stdin_fd_);
  set_nonblocking(stdout_fd_);
  set_nonblocking(stderr_fd_);
}

void ExternalScorer::drain_stderr() {
  if (stderr_fd_ < 0) return;
  char buf[4096];
  while (true) {
    const ssize_t n = ::read(stderr_fd_, buf, sizeof buf);
    if (n <= 0) break;
    if (err_buffer_.size() < kMaxStderr) {
      err_buffer_.append(buf, static_cast<std::size_t>(n));
    }
  }
}

void ExternalScorer::fail(int reason, const std::string& what, std::size_t row) {
  const auto r = static_cast<ScorerError::Reason>(reason);
  std::string message = "scorer '" + cfg_.command.front() + "': " + what;
  if (r == ScorerError::Reason::kCrash && pid_ > 0) {
    // Give the child a moment to exit so its status and stderr are final.
    close_fd(stdin_fd_);
    int status = 0;
    pid_t waited = 0;
    for (int i = 0; i < 100 && waited == 0; ++i) {
      waited = waitpid(pid_, &status, WNOHANG);
      if (waited == 0) ::usleep(10'000);
    }
    if (waited == pid_) {
      message += " (" + describe_status(status) + ")";
      pid_ = -1;
    }
  }
  drain_stderr();
  if (!err_buffer_.empty()) message += "; stderr: " + err_buffer_;
  if (pid_ > 0) ::kill(pid_, SIGKILL);
  shutdown();
  throw ScorerError(r, message, row);
}

void ExternalScorer::shutdown() {
  close_fd(stdin_fd_);
  if (pid_ > 0) {
    int status = 0;
    pid_t waited = 0;
    for (int i = 0; i < 200 && waited == 0; ++i) {
      waited = waitpid(pid_, &status, WNOHANG);
      if (waited == 0) ::usleep(5'000);
    }
    if (waited == 0) {
      ::kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }
  close_fd(stdout_fd_);
  close_fd(stderr_fd_);
}

std::string ExternalScorer::read_line(double deadline, std::size_t response_no) {
  while (true) {
    if (const auto nl = out_buffer_.find('\n'); nl != std::string::npos) {
      std::string line = out_buffer_.substr(0, nl);
      out_buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (stdout_fd_ < 0) {
      fail(static_cast<int>(ScorerError::Reason::kCrash), "scorer is not running");
    }
    const double remaining = deadline - now_seconds();
    if (remaining <= 0.0) {
      fail(static_cast<int>(ScorerError::Reason::kTimeout),
           "timed out waiting for response " + std::to_string(response_no),
           response_no == 0 ? ScorerError::kNoRow : response_no - 1);
    }
    pollfd fds[2] = {{stdout_fd_, POLLIN, 0}, {stderr_fd_, POLLIN, 0}};
    const int rc = ::poll(fds, 2, static_cast<int>(std::ceil(remaining * 1000.0)));
    if (rc < 0 && errno != EINTR) {
      fail(static_cast<int>(ScorerError::Reason::kCrash),
           std::string("poll failed: ") + std::strerror(errno));
    }
    if (fds[1].revents) drain_stderr();
    if (fds[0].revents) {
      char buf[65536];
      const ssize_t n = ::read(stdout_fd_, buf, sizeof buf);
      if (n > 0) {
        out_buffer_.append(buf, static_cast<std::size_t>(n));
      } else if (n == 0 || (errno != EAGAIN && errno != EINTR)) {
        fail(static_cast<int>(ScorerError::Reason::kCrash),
             "scorer exited before response " + std::to_string(response_no),
             response_no == 0 ? ScorerError::kNoRow : response_no - 1);
      }
    }
  }
}

void ExternalScorer::write_all(const std::string& data, double deadline) {
  std::size_t written = 0;
  while (written < data.size()) {
    if (stdin_fd_ < 0) {
      fail(static_cast<int>(ScorerError::Reason::kCrash), "scorer is not running");
    }
    const ssize_t n = ::write(stdin_fd_, data.data() + written, data.size() - written);
    if (n > 0) {
      written += static_cast<std::size_t>(n);
      continue;
    }
    if (errno == EPIPE) {
      fail(static_cast<int>(ScorerError::Reason::kCrash), "scorer closed its input");
    }
    if (errno != EAGAIN && errno != EINTR) {
      fail(static_cast<int>(ScorerError::Reason::kCrash),
           std::string("write failed: ") + std::strerror(errno));
    }
    // Input pipe is full: the scorer may be blocked writing responses, so
    // keep reading them while waiting.
    const double remaining = deadline - now_seconds();
    if (remaining <= 0.0) {
      fail(static_cast<int>(ScorerError::Reason::kTimeout), "timed out sending requests");
    }
    pollfd fds[3] = {{stdin_fd_, POLLOUT, 0}, {stdout_fd_, POLLIN, 0}, {stderr_fd_, POLLIN, 0}};
    ::poll(fds, 3, static_cast<int>(std::ceil(remaining * 1000.0)));
    if (fds[2].revents) drain_stderr();
    if (fds[1].revents & POLLIN) {
      char buf[65536];
      const ssize_t r = ::read(stdout_fd_, buf, sizeof buf);
      if (r > 0) out_buffer_.append(buf, static_cast<std::size_t>(r));
    }
    if (fds[0].revents & (POLLERR | POLLHUP)) {
      fail(static_cast<int>(ScorerError::Reason::kCrash), "scorer closed its input");
    }
  }
}

std::vector<double> ExternalScorer::score(std::span<const MetricRow> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  const auto batch = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < rows.size(); start += batch) {
    const std::size_t end = std::min(rows.size(), start + batch);
    std::string request;
    for (std::size_t i = start; i < end; ++i) {
      request += escape_field(rows[i].src);
      request += '\t';
      request += escape_field(rows[i].hyp);
      if (rows[i].ref) {
        request += '\t';
        request += escape_field(*rows[i].ref);
      }
      request += '\n';
    }
    const double deadline = now_seconds() + cfg_.timeout_seconds;
    write_all(request, deadline);
    for (std::size_t i = start; i < end; ++i) {
      const std::string line = read_line(deadline, i + 1);
      const std::string_view value = trim(line);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (value.empty() || ec != std::errc() || ptr != value.data() + value.size() ||
          !std::isfinite(v)) {
        fail(static_cast<int>(ScorerError::Reason::kProtocol),
             "non-numeric response on line " + std::to_string(i + 1) + ": '" + line + "'",
             i);
      }
      out.push_back(v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ExternalMetric::ExternalMetric(ExternalScorerConfig cfg, MetricKind declared_kind)
    : scorer_(std::move(cfg)) {
  if (scorer_.kind() != declared_kind) {
    throw ScorerError(ScorerError::Reason::kProtocol,
                      "scorer '" + scorer_.name() + "' declares " +
                          (scorer_.kind() == MetricKind::kReferenceBased ? "ref" : "noref") +
                          " but was requested as " +
                          (declared_kind == MetricKind::kReferenceBased ? "reference-based"
                                                                         : "reference-free"));
  }
}

std::vector<double> ExternalMetric::score(std::span<const MetricRow> rows) {
  check_rows(rows);
  if (rows.empty()) return {};
  std::lock_guard lock(mutex_);
  return scorer_.score(rows);
}

}  // namespace qad
