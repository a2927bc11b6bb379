#include "trawl/oracle.hpp"

#include <json.hpp>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <stdexcept>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace trawl {

namespace {

std::vector<std::string> child_environment(const std::filesystem::path& weights) {
    const std::string prefix = std::string(kWeightsEnvVar) + "=";
    std::vector<std::string> env;
    for (char** e = environ; e && *e; ++e)
        if (std::strncmp(*e, prefix.c_str(), prefix.size()) != 0) env.emplace_back(*e);
    env.push_back(prefix + weights.string());
    return env;
}

}  // namespace

std::string_view to_string(OracleStatus status) {
    switch (status) {
        case OracleStatus::Ok: return "ok";
        case OracleStatus::NonzeroExit: return "nonzero-exit";
        case OracleStatus::Timeout: return "timeout";
        case OracleStatus::Unparsable: return "unparsable-output";
        case OracleStatus::LaunchFailure: return "launch-failure";
    }
    return "?";
}

OracleResult parse_oracle_output(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("oracle output is not a single JSON value: ") +
                                    e.what());
    }
    if (!doc.is_object()) throw std::invalid_argument("oracle output is not a JSON object");

    OracleResult result;
    for (const auto& [key, value] : doc.items()) {
        if (value.is_null()) continue;
        if (!value.is_number()) {
            if (key == "accuracy" || key == "loss")
                throw std::invalid_argument("oracle field '" + key + "' is not a number");
            continue;
        }
        const double v = value.get<double>();
        if (key == "accuracy") {
            if (v < 0 || v > 1) throw std::invalid_argument("oracle accuracy outside [0, 1]");
            result.accuracy = v;
        } else if (key == "loss") {
            result.loss = v;
        } else {
            result.extra[key] = v;
        }
    }
    if (!result.accuracy && !result.loss)
        throw std::invalid_argument("oracle output has neither 'accuracy' nor 'loss'");
    return result;
}

OracleOutcome evaluate_with_oracle(const std::filesystem::path& patched_path,
                                   const std::string& oracle_cmd,
                                   std::chrono::milliseconds timeout) {
    OracleOutcome outcome;
    auto fail = [&](OracleStatus status, std::string message) {
        outcome.status = status;
        outcome.result.reset();
        outcome.message = std::move(message);
        return outcome;
    };

    // Everything the child needs is prepared before fork.
    const std::vector<std::string> env_strings = child_environment(patched_path);
    std::vector<char*> envp;
    for (const auto& s : env_strings) envp.push_back(const_cast<char*>(s.c_str()));
    envp.push_back(nullptr);
    const char* argv[] = {"sh", "-c", oracle_cmd.c_str(), nullptr};

    int fds[2];
    if (pipe2(fds, O_CLOEXEC) != 0)
        return fail(OracleStatus::LaunchFailure, std::string("pipe: ") + std::strerror(errno));

    const pid_t pid = fork();
    if (pid < 0) {
        close(fds[0]);
        close(fds[1]);
        return fail(OracleStatus::LaunchFailure, std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        setpgid(0, 0);
        dup2(fds[1], STDOUT_FILENO);
        execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
        _exit(127);
    }
    close(fds[1]);
    setpgid(pid, pid);

    std::string captured;
    bool timed_out = false;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    char buf[4096];
    for (;;) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) {
            timed_out = true;
            break;
        }
        pollfd pfd{fds[0], POLLIN, 0};
        const int ready = poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1000)));
        if (ready < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (ready == 0) continue;
        const ssize_t n = read(fds[0], buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        captured.append(buf, static_cast<std::size_t>(n));
    }
    close(fds[0]);

    if (timed_out) {
        kill(-pid, SIGKILL);
        kill(pid, SIGKILL);
    }
    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }

    if (timed_out)
        return fail(OracleStatus::Timeout,
                    "oracle timed out after " + std::to_string(timeout.count()) + " ms");
    if (WIFSIGNALED(status)) {
        outcome.exit_code = 128 + WTERMSIG(status);
        return fail(OracleStatus::NonzeroExit,
                    "oracle killed by signal " + std::to_string(WTERMSIG(status)));
    }
    outcome.exit_code = WEXITSTATUS(status);
    if (outcome.exit_code != 0)
        return fail(OracleStatus::NonzeroExit,
                    "oracle exited with status " + std::to_string(outcome.exit_code));
    try {
        outcome.result = parse_oracle_output(captured);
    } catch (const std::invalid_argument& e) {
        return fail(OracleStatus::Unparsable, e.what());
    }
    outcome.status = OracleStatus::Ok;
    return outcome;
}

}  // namespace trawl
