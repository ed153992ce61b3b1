#include "glam/report.hpp"
#include "glam/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace glam {

const TemplateTable& template_table()
{
    static const TemplateTable table = [] {
        TemplateTable t;
        t.density = {{
            {"the breasts are almost entirely fatty.", "breast tissue is almost entirely fatty.",
             "the breast composition is predominantly fatty.", "fatty tissue is seen throughout the breast."},
            {"there are scattered areas of fibroglandular density.", "scattered fibroglandular densities are present.",
             "the breast shows scattered fibroglandular tissue.", "scattered areas of fibroglandular tissue are seen."},
            {"the breasts are heterogeneously dense.", "breast tissue is heterogeneously dense.",
             "heterogeneously dense tissue may obscure small masses.", "the breast composition is heterogeneously dense."},
            {"the breasts are extremely dense.", "breast tissue is extremely dense.",
             "extremely dense tissue lowers the sensitivity of the exam.", "the breast composition is extremely dense."},
        }};
        t.densityKeyPhrase = {"fatty", "scattered", "heterogeneously dense", "extremely dense"};
        t.noFinding = {"no suspicious mass or calcification is seen.", "there is no evidence of malignancy."};
        t.massFinding = {"there is a circumscribed mass.", "a mass is present in the breast."};
        t.calcFinding = {"there are grouped calcifications.", "calcifications are present in the breast."};
        t.imaging = {"screening mammogram of the left breast with cc and mlo views.",
                     "screening mammogram of the right breast with cc and mlo views."};
        t.synonyms = {{"seen", "noted"},          {"present", "identified"}, {"shows", "demonstrates"},
                      {"screening", "routine"},   {"views", "projections"},  {"evidence", "sign"},
                      {"grouped", "clustered"},   {"circumscribed", "well defined"}};
        return t;
    }();
    return table;
}

std::vector<std::string> all_template_sentences()
{
    const TemplateTable& t = template_table();
    std::vector<std::string> out;
    for (const auto& cls : t.density) {
        out.insert(out.end(), cls.begin(), cls.end());
    }
    out.insert(out.end(), t.noFinding.begin(), t.noFinding.end());
    out.insert(out.end(), t.massFinding.begin(), t.massFinding.end());
    out.insert(out.end(), t.calcFinding.begin(), t.calcFinding.end());
    out.insert(out.end(), t.imaging.begin(), t.imaging.end());
    return out;
}

int birads_like_label(const std::vector<RoiKind>& kinds)
{
    if (kinds.empty()) {
        return 0;
    }
    const bool calc = std::find(kinds.begin(), kinds.end(), RoiKind::Calcification) != kinds.end();
    return calc ? 2 : 1;
}

namespace {

std::string substitute_synonyms(const std::string& sentence, std::mt19937_64& rng, double prob)
{
    if (prob <= 0.0) {
        return sentence;
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::istringstream in(sentence);
    std::string word;
    std::string out;
    while (in >> word) {
        std::string stem = word;
        std::string tail;
        if (!stem.empty() && stem.back() == '.') {
            stem.pop_back();
            tail = ".";
        }
        for (const auto& [from, to] : template_table().synonyms) {
            if (stem == from) {
                if (coin(rng) < prob) {
                    stem = to;
                }
                break;
            }
        }
        if (!out.empty()) {
            out += ' ';
        }
        out += stem + tail;
    }
    return out;
}

std::string join(const std::vector<std::string>& sentences)
{
    std::string text;
    for (const auto& s : sentences) {
        if (!text.empty()) {
            text += ' ';
        }
        text += s;
    }
    return text;
}

}  // namespace

ReportText parse_report(const std::string& text)
{
    ReportText out;
    std::string current;
    for (char ch : text) {
        if (ch == ' ' && current.empty()) {
            continue;
        }
        current += ch;
        if (ch == '.') {
            out.sentences.push_back(current);
            current.clear();
        }
    }
    while (!current.empty() && (current.back() == ' ' || current.back() == '\n')) {
        current.pop_back();
    }
    if (!current.empty()) {
        out.sentences.push_back(current);
    }
    out.text = join(out.sentences);
    return out;
}

ReportText augment_report(const ReportText& report, std::mt19937_64& rng, ReportAugment augment)
{
    ReportText out = report;
    if (augment.shuffle) {
        std::shuffle(out.sentences.begin(), out.sentences.end(), rng);
    }
    for (auto& s : out.sentences) {
        s = substitute_synonyms(s, rng, augment.synonymProb);
    }
    out.text = join(out.sentences);
    return out;
}

ReportText synthesize_report(const ReportMeta& meta, std::mt19937_64& rng, ReportAugment augment)
{
    const TemplateTable& t = template_table();
    if (meta.densityClass < 0 || meta.densityClass > 3) {
        throw ConfigError("synthesize_report: unknown density class " + std::to_string(meta.densityClass));
    }
    const auto variant = static_cast<std::size_t>(std::max(meta.variant, 0));
    ReportText report;
    const std::string& imaging = t.imaging[static_cast<std::size_t>(meta.laterality)];
    const std::string& density = t.density[static_cast<std::size_t>(meta.densityClass)][variant % 4];
    report.sentences.push_back(imaging);
    report.sentences.push_back(density);

    const bool mass = std::find(meta.roiKinds.begin(), meta.roiKinds.end(), RoiKind::Mass) != meta.roiKinds.end();
    const bool calc =
        std::find(meta.roiKinds.begin(), meta.roiKinds.end(), RoiKind::Calcification) != meta.roiKinds.end();
    std::string finding;
    if (!mass && !calc) {
        finding = t.noFinding[variant % t.noFinding.size()];
        report.sentences.push_back(finding);
    }
    if (mass) {
        const std::string& s = t.massFinding[variant % t.massFinding.size()];
        report.sentences.push_back(s);
        finding = s;
    }
    if (calc) {
        const std::string& s = t.calcFinding[variant % t.calcFinding.size()];
        report.sentences.push_back(s);
        finding = finding.empty() ? s : finding + " " + s;
    }
    report.fields["density"] = density;
    report.fields["finding"] = finding;
    report.fields["laterality"] = meta.laterality == Laterality::Left ? "left" : "right";
    report.text = join(report.sentences);
    return augment_report(report, rng, augment);
}

}  // namespace glam
