#include "css/external_scorer.hpp"

#include <csignal>
#include <map>
#include <set>
#include <stdexcept>

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace css {

using nlohmann::json;

ExternalScorer::ExternalScorer(const std::string& command, const Vocab& vocab,
                               int timeout_ms)
    : vocab_(vocab), timeout_ms_(timeout_ms) {
  // A peer that exits early must surface as a pipe error, not kill us.
  std::signal(SIGPIPE, SIG_IGN);

  int to_pipe[2];
  int from_pipe[2];
  if (pipe(to_pipe) != 0 || pipe(from_pipe) != 0)
    throw std::runtime_error("cannot create scorer pipes");
  const int pid = fork();
  if (pid < 0) throw std::runtime_error("cannot fork scorer process");
  if (pid == 0) {
    dup2(to_pipe[0], STDIN_FILENO);
    dup2(from_pipe[1], STDOUT_FILENO);
    close(to_pipe[0]);
    close(to_pipe[1]);
    close(from_pipe[0]);
    close(from_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), nullptr);
    _exit(127);
  }
  child_pid_ = pid;
  to_child_ = to_pipe[1];
  from_child_ = from_pipe[0];
  close(to_pipe[0]);
  close(from_pipe[1]);
}

ExternalScorer::~ExternalScorer() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (child_pid_ > 0) {
    // EOF on stdin asks the peer to exit; escalate if it lingers.
    int status = 0;
    for (int i = 0; i < 20; ++i) {
      if (waitpid(child_pid_, &status, WNOHANG) != 0) return;
      usleep(100 * 1000);
    }
    kill(child_pid_, SIGKILL);
    waitpid(child_pid_, &status, 0);
  }
}

std::string ExternalScorer::read_line_blocking(uint64_t waiting_id) {
  for (;;) {
    const size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int rv = poll(&pfd, 1, timeout_ms_);
    if (rv == 0)
      throw std::runtime_error("timed out waiting for response to request id " +
                               std::to_string(waiting_id));
    if (rv < 0) throw std::runtime_error("poll failed on scorer pipe");
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof(chunk));
    if (n < 0) throw std::runtime_error("read failed on scorer pipe");
    if (n == 0)
      throw std::runtime_error("peer closed the pipe with request id " +
                               std::to_string(waiting_id) + " pending");
    buffer_.append(chunk, static_cast<size_t>(n));
  }
}

std::vector<MatD> ExternalScorer::score(
    const std::vector<MaskedQuery>& queries) {
  std::map<uint64_t, size_t> pending;  // id -> slot
  std::vector<MatD> results(queries.size());

  for (size_t q = 0; q < queries.size(); ++q) {
    const uint64_t id = next_id_++;
    json request;
    request["id"] = id;
    json tokens = json::array();
    for (const int tid : queries[q].ids) tokens.push_back(vocab_.token(tid));
    request["tokens"] = std::move(tokens);
    json masks = json::array();
    for (const int pos : queries[q].mask_positions) masks.push_back(pos);
    request["mask_positions"] = std::move(masks);
    const std::string line = request.dump() + "\n";
    size_t written = 0;
    while (written < line.size()) {
      const ssize_t n =
          write(to_child_, line.data() + written, line.size() - written);
      if (n <= 0) throw std::runtime_error("peer closed the pipe mid-request");
      written += static_cast<size_t>(n);
    }
    pending.emplace(id, q);
  }

  std::set<uint64_t> answered;
  while (!pending.empty()) {
    const uint64_t oldest = pending.begin()->first;
    const std::string line = read_line_blocking(oldest);
    json response;
    try {
      response = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(
          "malformed response while waiting on request id " +
          std::to_string(oldest) + ": " + e.what());
    }
    uint64_t id = 0;
    try {
      id = response.at("id").get<uint64_t>();
    } catch (const std::exception&) {
      throw std::runtime_error(
          "response without id while waiting on request id " +
          std::to_string(oldest));
    }
    if (answered.count(id))
      throw std::runtime_error("duplicate response for request id " +
                               std::to_string(id));
    const auto it = pending.find(id);
    if (it == pending.end())
      throw std::runtime_error("unexpected response id " + std::to_string(id));
    const MaskedQuery& query = queries[it->second];

    const auto& rows = response.at("log_probs");
    if (!rows.is_array() || rows.size() != query.mask_positions.size())
      throw std::runtime_error("response for request id " + std::to_string(id) +
                               " has wrong mask count");
    MatD mat(static_cast<Eigen::Index>(rows.size()), vocab_.size());
    for (size_t m = 0; m < rows.size(); ++m) {
      const auto& row = rows[m];
      if (!row.is_array() || static_cast<int>(row.size()) != vocab_.size())
        throw std::runtime_error("response for request id " +
                                 std::to_string(id) +
                                 " has wrong vocabulary length");
      for (int c = 0; c < vocab_.size(); ++c)
        mat(static_cast<Eigen::Index>(m), c) = row[c].get<double>();
    }
    results[it->second] = std::move(mat);
    answered.insert(id);
    pending.erase(it);
  }
  return results;
}

}  // namespace css
