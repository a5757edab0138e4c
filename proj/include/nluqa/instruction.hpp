#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nluqa/corpus.hpp"

namespace nluqa {

enum class ContextOption { None, Given, Sentence, UserSays };
enum class PreQuestionOption { None, Question, Based, BasedAbove };
enum class PromptOption { None, Answer, AnswerOptions };

// One cell of the 4 x 4 x 3 instruction wording grid.
struct InstructionTemplate {
  ContextOption context = ContextOption::None;
  PreQuestionOption pre_question = PreQuestionOption::None;
  PromptOption prompt = PromptOption::None;

  // Bare utterance followed by the question.
  static InstructionTemplate none();
  // "The user says: <u> Question: <q>".
  static InstructionTemplate desc();

  // Accepts the presets "none"/"desc" and grid names such as
  // "usersaid-question-none" or "sent-based-above-answer-options".
  static InstructionTemplate parse(std::string_view name);

  // Canonical grid name, e.g. "usersaid-question-none".
  std::string name() const;

  // All 48 combinations in context-major order.
  static std::vector<InstructionTemplate> grid();

  friend bool operator==(const InstructionTemplate&, const InstructionTemplate&) = default;
};

enum class TaskKind { IdBinary, VeExtractive, McId };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view s);

struct InstructionInstance {
  std::string input_text;
  std::string target_text;
  TaskKind task_kind = TaskKind::IdBinary;
  std::string class_name;  // empty for MC instances
  std::string utterance_id;
  // Offset in input_text where the question part begins. Truncation for
  // long inputs removes text before this point only.
  std::size_t question_start = 0;
};

// Joins context, utterance, pre-question, question and prompt suffix with
// single spaces; the options block starts on a new line.
std::string render(const InstructionTemplate& t, std::string_view utterance_text,
                   std::string_view question);

std::string question_for_intent(const IntentClass& cls);
std::string question_for_slot(const SlotClass& cls);

inline constexpr std::string_view kYes = "yes";
inline constexpr std::string_view kNo = "no";
inline constexpr std::string_view kNoneOfTheAbove = "none of the above";
inline constexpr std::string_view kMcQuestion = "which of the following did the user intend?";

std::vector<InstructionInstance> compile_id(const AnnotatedUtterance& u, const DomainOntology& o,
                                            const InstructionTemplate& t);
std::vector<InstructionInstance> compile_ve(const AnnotatedUtterance& u, const DomainOntology& o,
                                            const InstructionTemplate& t);
InstructionInstance compile_mc(const AnnotatedUtterance& u, const DomainOntology& o,
                               const InstructionTemplate& t);

// MC answer options in ontology order: the intent descriptions.
std::vector<std::string> mc_options(const DomainOntology& o);

// Compiles a whole corpus for one task kind, utterance-major.
std::vector<InstructionInstance> compile_all(std::span<const AnnotatedUtterance> utterances,
                                             const DomainOntology& o, const InstructionTemplate& t,
                                             TaskKind kind);

// Line-delimited interchange records:
// {input_text, target_text, task_kind, class_name, utterance_id, question_start}
void write_instances(std::ostream& out, std::span<const InstructionInstance> instances);
std::vector<InstructionInstance> read_instances(std::istream& in);

}  // namespace nluqa
