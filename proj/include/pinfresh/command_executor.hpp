#pragma once

#include <csignal>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "crowdtest.hpp"

namespace pinfresh {

/// Runs consumer tests through an external command. Templates may use the
/// placeholders {consumer}, {dep_name}, {dep_version}, {test}, {suite},
/// {method}. Exit status 0 means pass; nonzero or timeout means fail. Output
/// is never interpreted except for list_cmd, which must print one test per
/// line as "suite::method".
class CommandExecutor : public TestExecutor {
public:
    struct Config {
        std::string run_cmd;
        std::string list_cmd;           // optional; empty => nothing is testable
        int test_timeout_sec = 60;      // per repetition
        int consumer_budget_sec = 1800; // per consumer suite
    };

    explicit CommandExecutor(Config config) : config_(std::move(config)) {}

    Availability availability(const LibraryRef& consumer) override {
        if (config_.list_cmd.empty()) return Availability::unavailable;
        auto listing = capture(render_template(config_.list_cmd, consumer, {}, {}),
                               config_.test_timeout_sec);
        return listing ? Availability::available : Availability::unavailable;
    }

    std::vector<TestId> discover(const LibraryRef& consumer) override {
        if (config_.list_cmd.empty()) return {};
        auto listing = capture(render_template(config_.list_cmd, consumer, {}, {}),
                               config_.test_timeout_sec);
        if (!listing) throw ExecutorFailure(consumer, "test discovery command failed");
        std::vector<TestId> tests;
        std::size_t start = 0;
        while (start < listing->size()) {
            std::size_t end = listing->find('\n', start);
            if (end == std::string::npos) end = listing->size();
            std::string line = listing->substr(start, end - start);
            start = end + 1;
            if (line.empty()) continue;
            auto sep = line.find("::");
            if (sep == std::string::npos)
                tests.push_back({"", line});
            else
                tests.push_back({line.substr(0, sep), line.substr(sep + 2)});
        }
        return tests;
    }

    TestResult run(const LibraryRef& consumer, const TestId& test,
                   const LibraryRef& dep) override {
        std::string cmd = render_template(config_.run_cmd, consumer, test, dep);
        int status = run_with_timeout(cmd, config_.test_timeout_sec);
        return status == 0 ? TestResult::pass : TestResult::fail;
    }

    static std::string render_template(const std::string& tmpl,
                                       const LibraryRef& consumer, const TestId& test,
                                       const LibraryRef& dep) {
        std::string out = tmpl;
        auto replace_all = [&out](const std::string& key, const std::string& value) {
            for (std::size_t pos = out.find(key); pos != std::string::npos;
                 pos = out.find(key, pos + value.size()))
                out.replace(pos, key.size(), value);
        };
        replace_all("{consumer}", to_string(consumer));
        replace_all("{dep_name}", dep.name);
        replace_all("{dep_version}", dep.version);
        replace_all("{test}", to_string(test));
        replace_all("{suite}", test.suite);
        replace_all("{method}", test.method);
        return out;
    }

private:
    // Exit status of `sh -c cmd`, or -1 on timeout (child killed).
    static int run_with_timeout(const std::string& cmd, int timeout_sec,
                                std::string* output = nullptr) {
        int pipefd[2] = {-1, -1};
        if (output && pipe(pipefd) != 0) return -1;
        pid_t pid = fork();
        if (pid < 0) return -1;
        if (pid == 0) {
            if (output) {
                dup2(pipefd[1], STDOUT_FILENO);
                close(pipefd[0]);
                close(pipefd[1]);
            }
            execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        if (output) close(pipefd[1]);

        std::string collected;
        auto drain = [&] {
            if (!output) return;
            char buf[4096];
            ssize_t n;
            while ((n = read(pipefd[0], buf, sizeof buf)) > 0)
                collected.append(buf, static_cast<std::size_t>(n));
        };

        const int poll_ms = 20;
        int waited_ms = 0;
        for (;;) {
            int status = 0;
            pid_t done = waitpid(pid, &status, WNOHANG);
            if (done == pid) {
                drain();
                if (output) {
                    close(pipefd[0]);
                    *output = collected;
                }
                if (WIFEXITED(status)) return WEXITSTATUS(status);
                return -1;
            }
            if (waited_ms >= timeout_sec * 1000) {
                kill(pid, SIGKILL);
                waitpid(pid, nullptr, 0);
                if (output) close(pipefd[0]);
                return -1;
            }
            usleep(poll_ms * 1000);
            waited_ms += poll_ms;
        }
    }

    static std::optional<std::string> capture(const std::string& cmd, int timeout_sec) {
        std::string out;
        int status = run_with_timeout(cmd, timeout_sec, &out);
        if (status != 0) return std::nullopt;
        return out;
    }

    Config config_;
};

} // namespace pinfresh
