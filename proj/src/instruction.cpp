#include "nluqa/instruction.hpp"

#include <array>
#include <istream>

#include <nlohmann/json.hpp>

#include "nluqa/errors.hpp"
#include "nluqa/text.hpp"

namespace nluqa {

namespace {

struct Named {
  std::string_view name;
  std::string_view text;
};

constexpr std::array<Named, 4> kContexts{{
    {"none", ""},
    {"given", "Given the following sentence:"},
    {"sent", "Sentence:"},
    {"usersaid", "The user says:"},
}};

constexpr std::array<Named, 4> kPreQuestions{{
    {"none", ""},
    {"question", "Question:"},
    {"based", "Based on the question:"},
    {"based-above", "Based on the question above:"},
}};

constexpr std::array<std::string_view, 3> kPromptNames{"none", "answer", "answer-options"};

constexpr std::string_view kAnswer = "Answer:";
constexpr std::string_view kYesNoOptions = "Options: -yes -no";

struct Rendered {
  std::string text;
  std::size_t question_start = 0;
};

// Everything up to and including the question.
Rendered render_head(const InstructionTemplate& t, std::string_view utterance,
                     std::string_view question) {
  Rendered r;
  auto ctx = kContexts[static_cast<std::size_t>(t.context)].text;
  auto pq = kPreQuestions[static_cast<std::size_t>(t.pre_question)].text;
  if (!ctx.empty()) {
    r.text += ctx;
    r.text += ' ';
  }
  r.text += utterance;
  r.text += ' ';
  r.question_start = r.text.size();
  if (!pq.empty()) {
    r.text += pq;
    r.text += ' ';
  }
  r.text += question;
  return r;
}

Rendered render_binary(const InstructionTemplate& t, std::string_view utterance,
                       std::string_view question, bool allow_options_block) {
  Rendered r = render_head(t, utterance, question);
  PromptOption prompt = t.prompt;
  if (prompt == PromptOption::AnswerOptions && !allow_options_block) prompt = PromptOption::Answer;
  switch (prompt) {
    case PromptOption::None:
      break;
    case PromptOption::Answer:
      r.text += ' ';
      r.text += kAnswer;
      break;
    case PromptOption::AnswerOptions:
      r.text += '\n';
      r.text += kYesNoOptions;
      r.text += '\n';
      r.text += kAnswer;
      break;
  }
  return r;
}

std::string strip_question_mark(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '?' || s.back() == ' ')) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

InstructionTemplate InstructionTemplate::none() { return {}; }

InstructionTemplate InstructionTemplate::desc() {
  return {ContextOption::UserSays, PreQuestionOption::Question, PromptOption::None};
}

InstructionTemplate InstructionTemplate::parse(std::string_view name) {
  const std::string lowered = to_lower(trim(name));
  if (lowered == "none" || lowered == "none-none-none") return none();
  if (lowered == "desc" || lowered == "desc." || lowered == "descriptive") return desc();

  std::string_view rest = lowered;
  auto fail = [&]() -> InstructionTemplate {
    throw ArgumentError("unknown instruction template '" + std::string(name) + "'");
  };
  auto eat = [&](std::string_view token) {
    if (rest.substr(0, token.size()) != token) return false;
    std::string_view after = rest.substr(token.size());
    if (!after.empty() && after.front() != '-') return false;
    rest = after.empty() ? after : after.substr(1);
    return true;
  };

  InstructionTemplate t;
  bool found = false;
  for (std::size_t i = 0; i < kContexts.size() && !found; ++i) {
    if (eat(kContexts[i].name)) {
      t.context = static_cast<ContextOption>(i);
      found = true;
    }
  }
  if (!found) return fail();

  // Longest names first so "based-above" is not read as "based".
  static constexpr std::array<std::pair<std::string_view, PreQuestionOption>, 5> kPq{{
      {"based-above", PreQuestionOption::BasedAbove},
      {"basedabove", PreQuestionOption::BasedAbove},
      {"question", PreQuestionOption::Question},
      {"based", PreQuestionOption::Based},
      {"none", PreQuestionOption::None},
  }};
  found = false;
  for (const auto& [token, value] : kPq) {
    if (eat(token)) {
      t.pre_question = value;
      found = true;
      break;
    }
  }
  if (!found) return fail();

  if (rest == "none") {
    t.prompt = PromptOption::None;
  } else if (rest == "answer") {
    t.prompt = PromptOption::Answer;
  } else if (rest == "answer-options" || rest == "answeroptions") {
    t.prompt = PromptOption::AnswerOptions;
  } else {
    return fail();
  }
  return t;
}

std::string InstructionTemplate::name() const {
  std::string out(kContexts[static_cast<std::size_t>(context)].name);
  out += '-';
  out += kPreQuestions[static_cast<std::size_t>(pre_question)].name;
  out += '-';
  out += kPromptNames[static_cast<std::size_t>(prompt)];
  return out;
}

std::vector<InstructionTemplate> InstructionTemplate::grid() {
  std::vector<InstructionTemplate> out;
  for (std::size_t c = 0; c < kContexts.size(); ++c) {
    for (std::size_t q = 0; q < kPreQuestions.size(); ++q) {
      for (std::size_t p = 0; p < kPromptNames.size(); ++p) {
        out.push_back({static_cast<ContextOption>(c), static_cast<PreQuestionOption>(q),
                       static_cast<PromptOption>(p)});
      }
    }
  }
  return out;
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::IdBinary: return "ID-binary";
    case TaskKind::VeExtractive: return "VE-extractive";
    case TaskKind::McId: return "MC-ID";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "ID-binary") return TaskKind::IdBinary;
  if (s == "VE-extractive") return TaskKind::VeExtractive;
  if (s == "MC-ID") return TaskKind::McId;
  throw ArgumentError("unknown task kind '" + std::string(s) + "'");
}

std::string render(const InstructionTemplate& t, std::string_view utterance_text,
                   std::string_view question) {
  return render_binary(t, utterance_text, question, true).text;
}

std::string question_for_intent(const IntentClass& cls) {
  if (cls.question) return *cls.question;
  return "did the user " + strip_question_mark(cls.description) + "?";
}

std::string question_for_slot(const SlotClass& cls) {
  if (cls.question) return *cls.question;
  return "what is the " + strip_question_mark(cls.description) + " mentioned?";
}

std::vector<InstructionInstance> compile_id(const AnnotatedUtterance& u, const DomainOntology& o,
                                            const InstructionTemplate& t) {
  std::vector<InstructionInstance> out;
  out.reserve(o.intents.size());
  for (const auto& cls : o.intents) {
    auto r = render_binary(t, u.text, question_for_intent(cls), true);
    InstructionInstance inst;
    inst.input_text = std::move(r.text);
    inst.question_start = r.question_start;
    inst.target_text = std::string(u.gold_intents.count(cls.name) ? kYes : kNo);
    inst.task_kind = TaskKind::IdBinary;
    inst.class_name = cls.name;
    inst.utterance_id = u.id;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<InstructionInstance> compile_ve(const AnnotatedUtterance& u, const DomainOntology& o,
                                            const InstructionTemplate& t) {
  std::vector<InstructionInstance> out;
  out.reserve(o.slots.size());
  for (const auto& cls : o.slots) {
    auto r = render_binary(t, u.text, question_for_slot(cls), false);
    auto values = u.values_for(cls.name);
    InstructionInstance inst;
    inst.input_text = std::move(r.text);
    inst.question_start = r.question_start;
    inst.target_text = values.empty() ? std::string(kUnanswerable) : join(values, kValueSeparator);
    inst.task_kind = TaskKind::VeExtractive;
    inst.class_name = cls.name;
    inst.utterance_id = u.id;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<std::string> mc_options(const DomainOntology& o) {
  std::vector<std::string> out;
  out.reserve(o.intents.size());
  for (const auto& cls : o.intents) out.push_back(std::string(trim(cls.description)));
  return out;
}

InstructionInstance compile_mc(const AnnotatedUtterance& u, const DomainOntology& o,
                               const InstructionTemplate& t) {
  Rendered r = render_head(t, u.text, kMcQuestion);
  r.text += "\nOptions:";
  const auto options = mc_options(o);
  for (const auto& opt : options) {
    r.text += "\n- ";
    r.text += opt;
  }
  r.text += "\n- ";
  r.text += kNoneOfTheAbove;
  if (t.prompt != PromptOption::None) {
    r.text += '\n';
    r.text += kAnswer;
  }

  std::vector<std::string> gold;
  for (std::size_t i = 0; i < o.intents.size(); ++i) {
    if (u.gold_intents.count(o.intents[i].name)) gold.push_back(options[i]);
  }

  InstructionInstance inst;
  inst.input_text = std::move(r.text);
  inst.question_start = r.question_start;
  inst.target_text = gold.empty() ? std::string(kNoneOfTheAbove) : join(gold, kValueSeparator);
  inst.task_kind = TaskKind::McId;
  inst.utterance_id = u.id;
  return inst;
}

std::vector<InstructionInstance> compile_all(std::span<const AnnotatedUtterance> utterances,
                                             const DomainOntology& o, const InstructionTemplate& t,
                                             TaskKind kind) {
  std::vector<InstructionInstance> out;
  for (const auto& u : utterances) {
    switch (kind) {
      case TaskKind::IdBinary: {
        auto part = compile_id(u, o, t);
        std::move(part.begin(), part.end(), std::back_inserter(out));
        break;
      }
      case TaskKind::VeExtractive: {
        auto part = compile_ve(u, o, t);
        std::move(part.begin(), part.end(), std::back_inserter(out));
        break;
      }
      case TaskKind::McId:
        out.push_back(compile_mc(u, o, t));
        break;
    }
  }
  return out;
}

void write_instances(std::ostream& out, std::span<const InstructionInstance> instances) {
  for (const auto& inst : instances) {
    nlohmann::ordered_json rec;
    rec["input_text"] = inst.input_text;
    rec["target_text"] = inst.target_text;
    rec["task_kind"] = to_string(inst.task_kind);
    rec["class_name"] = inst.class_name.empty() ? nlohmann::ordered_json(nullptr)
                                                : nlohmann::ordered_json(inst.class_name);
    rec["utterance_id"] = inst.utterance_id;
    rec["question_start"] = inst.question_start;
    out << rec.dump() << '\n';
  }
}

std::vector<InstructionInstance> read_instances(std::istream& in) {
  std::vector<InstructionInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      InstructionInstance inst;
      inst.input_text = rec.at("input_text").get<std::string>();
      inst.target_text = rec.at("target_text").get<std::string>();
      inst.task_kind = parse_task_kind(rec.at("task_kind").get<std::string>());
      if (rec.contains("class_name") && !rec["class_name"].is_null()) {
        inst.class_name = rec["class_name"].get<std::string>();
      }
      inst.utterance_id = rec.at("utterance_id").get<std::string>();
      inst.question_start = rec.value("question_start", std::size_t{0});
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("instance record " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace nluqa
