// Test doubles: a simulated model behind ScriptedBackend whose judge scores
// are a function of the candidate question, plus small filesystem helpers.
#pragma once

#include <stdlib.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "evoqa/gateway.hpp"
#include "evoqa/protocol.hpp"
#include "evoqa/rubric.hpp"

namespace evoqa::testing {

inline std::string between(const std::string& text, const std::string& open, const std::string& close) {
  const auto start = text.find(open);
  if (start == std::string::npos) {
    return {};
  }
  const auto begin = start + open.size();
  const auto end = text.find(close, begin);
  return end == std::string::npos ? std::string{} : text.substr(begin, end - begin);
}

/// N from the output contract ("a JSON array of exactly N objects").
inline int requested_count(const std::string& prompt) {
  static const std::regex re("JSON array of exactly ([0-9]+) objects");
  std::smatch m;
  return std::regex_search(prompt, m, re) ? std::stoi(m[1].str()) : 0;
}

inline std::string judged_question(const CompletionRequest& request) {
  return between(request.prompt.text, "<candidate_question>\n", "\n</candidate_question>");
}

inline std::string parent_question(const CompletionRequest& request) {
  return between(request.prompt.text, "<parent_question>\n", "\n</parent_question>");
}

inline ScoreMap uniform_scores(const Rubric& rubric, const Rational& value) {
  ScoreMap scores;
  for (const auto& m : rubric.metrics) {
    scores[m.id] = value;
  }
  return scores;
}

inline std::vector<QAPair> named_pairs(const std::vector<std::string>& questions) {
  std::vector<QAPair> out;
  for (const auto& q : questions) {
    out.push_back(make_qa_pair(q, "answer to " + q, "x", 0, std::nullopt));
  }
  return out;
}

/// Seeds are S0..S(n-1); the children of parent q are q.1..q.n; every
/// judged candidate gets scores(question).
struct SimModel {
  Rubric rubric = default_rubric();
  std::function<ScoreMap(const std::string& question)> scores;

  [[nodiscard]] std::shared_ptr<ScriptedBackend> backend() const {
    auto b = std::make_shared<ScriptedBackend>();
    b->set_role_responder(PromptRole::Seed, [](const CompletionRequest& r) {
      std::vector<std::string> qs;
      for (int i = 0; i < requested_count(r.prompt.text); ++i) {
        qs.push_back("S" + std::to_string(i));
      }
      return "Reasoning first.\n" + serialize_qa_batch(named_pairs(qs));
    });
    b->set_role_responder(PromptRole::Variation, [](const CompletionRequest& r) {
      const std::string parent = parent_question(r);
      std::vector<std::string> qs;
      for (int i = 1; i <= requested_count(r.prompt.text); ++i) {
        qs.push_back(parent + "." + std::to_string(i));
      }
      return serialize_qa_batch(named_pairs(qs));
    });
    auto rub = rubric;
    auto fn = scores;
    b->set_role_responder(PromptRole::Judge, [rub, fn](const CompletionRequest& r) {
      return serialize_judge_response(fn(judged_question(r)), "simulated", rub);
    });
    return b;
  }
};

class TempDir {
 public:
  TempDir() {
    std::string templ = (std::filesystem::temp_directory_path() / "evoqa-test-XXXXXX").string();
    if (::mkdtemp(templ.data()) == nullptr) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) {
    n += c == '\n' ? 1 : 0;
  }
  return n;
}

inline const char* kSampleDocument =
    "# Tide pools\n\nTide pools form where rock holds seawater at low tide.\n"
    "Anemones, snails and small crabs live in them and must survive changes in temperature and salinity.\n";

}  // namespace evoqa::testing
