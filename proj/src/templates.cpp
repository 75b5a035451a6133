#include "lingbridge/templates.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/hashing.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>

#ifndef LINGBRIDGE_DEFAULT_TEMPLATE_DIR
#define LINGBRIDGE_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace lingbridge {

PromptTemplate::PromptTemplate(std::string name, LanguageCode language, std::string body,
                               std::vector<std::string> placeholders)
    : name_(std::move(name)), language_(std::move(language)), body_(std::move(body)),
      placeholders_(std::move(placeholders)) {
    // Longest first, so "[[Q]]" is never mistaken for a shorter token.
    std::sort(placeholders_.begin(), placeholders_.end(),
              [](const std::string& a, const std::string& b) { return a.size() != b.size() ? a.size() > b.size() : a < b; });
    for (const auto& p : placeholders_) {
        if (body_.find(p) == std::string::npos) {
            throw Error(ErrorCode::TemplateError, file_name() + " does not contain declared placeholder " + p);
        }
    }
}

std::string PromptTemplate::render(const Bindings& bindings) const {
    std::map<std::string, const std::string*> bound;
    for (const auto& [key, value] : bindings) {
        if (std::find(placeholders_.begin(), placeholders_.end(), key) == placeholders_.end()) {
            throw Error(ErrorCode::TemplateError, file_name() + " has no placeholder " + key);
        }
        if (!bound.emplace(key, &value).second) {
            throw Error(ErrorCode::TemplateError, file_name() + ": placeholder " + key + " bound twice");
        }
    }
    for (const auto& p : placeholders_) {
        if (!bound.count(p)) throw Error(ErrorCode::MissingBinding, file_name() + ": placeholder " + p + " is unbound");
    }
    std::string out;
    out.reserve(body_.size() + 256);
    for (std::size_t i = 0; i < body_.size();) {
        bool replaced = false;
        if (body_[i] == '[') {
            for (const auto& p : placeholders_) {
                if (body_.compare(i, p.size(), p) == 0) {
                    out += *bound.at(p);
                    i += p.size();
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) out.push_back(body_[i++]);
    }
    return out;
}

std::string PromptTemplate::sha256() const { return sha256_hex(body_); }

const std::vector<std::string>& declared_placeholders(const std::string& template_name) {
    static const std::map<std::string, std::vector<std::string>> kDeclared = {
        {"selection", {}},
        {"judge", {"[QUESTION]", "[ANSWER]", "[RES]"}},
        {"integration", {"[[Q]]", "[[CH_RES]]", "[[EN_RES]]"}},
        {"generation", {"[TOPIC]"}},
        {"label", {"[QUESTION]"}},
        {"score", {"[QUESTION]", "[RES]"}},
    };
    auto it = kDeclared.find(template_name);
    if (it == kDeclared.end()) throw Error(ErrorCode::TemplateError, "unknown template name '" + template_name + "'");
    return it->second;
}

std::filesystem::path TemplateSet::default_dir() {
    if (const char* env = std::getenv("LINGBRIDGE_TEMPLATE_DIR"); env && *env) return env;
    return LINGBRIDGE_DEFAULT_TEMPLATE_DIR;
}

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw Error(ErrorCode::Io, "template directory " + dir.string() + " does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    TemplateSet set;
    for (const auto& path : files) {
        const std::string stem = path.stem().string();  // "selection.en"
        const auto dot = stem.find('.');
        if (dot == std::string::npos) continue;
        const std::string name = stem.substr(0, dot);
        auto language = LanguageRegistry::active().try_normalize(stem.substr(dot + 1));
        if (!language) continue;
        const std::vector<std::string>* declared = nullptr;
        try {
            declared = &declared_placeholders(name);
        } catch (const Error&) {
            continue;
        }
        std::ifstream in(path, std::ios::binary);
        std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        set.add(PromptTemplate(name, *language, std::move(body), *declared));
    }
    return set;
}

void TemplateSet::add(PromptTemplate t) {
    const auto key = t.file_name();
    templates_.insert_or_assign(key, std::move(t));
}

bool TemplateSet::has(const std::string& name, const LanguageCode& language) const {
    return templates_.count(name + "." + language.value() + ".txt") != 0;
}

const PromptTemplate& TemplateSet::get(const std::string& name, const LanguageCode& language) const {
    auto it = templates_.find(name + "." + language.value() + ".txt");
    if (it == templates_.end()) {
        throw Error(ErrorCode::TemplateError, "no " + name + " template for language " + language.value());
    }
    return it->second;
}

std::map<std::string, std::string> TemplateSet::hashes() const {
    std::map<std::string, std::string> out;
    for (const auto& [key, t] : templates_) out.emplace(key, t.sha256());
    return out;
}

}  // namespace lingbridge
