#pragma once

#include "lingbridge/core.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lingbridge {

using Bindings = std::vector<std::pair<std::string, std::string>>;

/// A prompt body with a declared placeholder set. Rendering is single-pass, so
/// bound values that look like placeholders are emitted verbatim.
class PromptTemplate {
public:
    PromptTemplate(std::string name, LanguageCode language, std::string body, std::vector<std::string> placeholders);

    /// Every declared placeholder must be bound exactly once and nothing else may be bound.
    std::string render(const Bindings& bindings) const;

    const std::string& name() const { return name_; }
    const LanguageCode& language() const { return language_; }
    const std::string& body() const { return body_; }
    const std::vector<std::string>& placeholders() const { return placeholders_; }
    std::string sha256() const;

    /// "selection.en.txt"
    std::string file_name() const { return name_ + "." + language_.value() + ".txt"; }

private:
    std::string name_;
    LanguageCode language_;
    std::string body_;
    std::vector<std::string> placeholders_;
};

/// Placeholder declarations for the known template names. Selection prompts declare
/// none: the question is appended after the body.
const std::vector<std::string>& declared_placeholders(const std::string& template_name);

class TemplateSet {
public:
    /// Loads every `<name>.<lang>.txt` file whose name is known.
    static TemplateSet load_dir(const std::filesystem::path& dir);

    /// Directory compiled in at build time, overridable with LINGBRIDGE_TEMPLATE_DIR.
    static std::filesystem::path default_dir();

    void add(PromptTemplate t);
    bool has(const std::string& name, const LanguageCode& language) const;
    const PromptTemplate& get(const std::string& name, const LanguageCode& language) const;

    /// file name -> sha256 of the body.
    std::map<std::string, std::string> hashes() const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

}  // namespace lingbridge
