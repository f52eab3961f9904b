#include "cmr/data.hpp"

#include "cmr/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <set>
#include <unordered_map>

namespace cmr {

const char* to_string(ColumnKind kind) {
    switch (kind) {
    case ColumnKind::continuous: return "continuous";
    case ColumnKind::binary: return "binary";
    case ColumnKind::categorical: return "categorical";
    }
    return "?";
}

std::size_t CovariateTable::rows() const {
    if (columns.empty()) return 0;
    const auto& c = columns.front();
    return c.kind == ColumnKind::categorical ? c.labels.size() : c.values.size();
}

const Covariate* CovariateTable::find(const std::string& name) const {
    for (const auto& c : columns)
        if (c.name == name) return &c;
    return nullptr;
}

Eigen::Index DesignMatrix::column_index(const std::string& variable, const std::string& level) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
        if (columns[j].variable == variable && columns[j].level == level) return static_cast<Eigen::Index>(j);
    return -1;
}

namespace {

bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "." || s == "NULL";
}

std::optional<double> parse_number(const std::string& s) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<long long> parse_integer(const std::string& s) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string where(const std::string& column, std::size_t row) {
    return "column '" + column + "', data row " + std::to_string(row + 1);
}

void reject_missing(const std::string& column, const std::vector<std::string>& values) {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (is_missing(values[i])) throw ValidationError("missing value in " + where(column, i));
}

// Numeric order when every label is an integer, otherwise lexicographic.
std::vector<std::string> canonical_levels(const std::vector<std::string>& labels) {
    std::set<std::string> unique(labels.begin(), labels.end());
    std::vector<std::string> levels(unique.begin(), unique.end());
    bool all_int = std::all_of(levels.begin(), levels.end(),
                               [](const std::string& s) { return parse_integer(s).has_value(); });
    if (all_int)
        std::stable_sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
            return *parse_integer(a) < *parse_integer(b);
        });
    return levels;
}

std::vector<int> index_labels(const std::vector<std::string>& labels, const std::vector<std::string>& levels) {
    std::unordered_map<std::string, int> lookup;
    for (std::size_t k = 0; k < levels.size(); ++k) lookup.emplace(levels[k], static_cast<int>(k));
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = lookup.at(labels[i]);
    return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

Covariate parse_covariate(const std::string& name, const std::vector<std::string>& raw, bool force_categorical) {
    reject_missing(name, raw);
    Covariate c;
    c.name = name;
    if (!force_categorical) {
        std::vector<double> values;
        values.reserve(raw.size());
        bool numeric = true;
        for (const auto& s : raw) {
            auto v = parse_number(s);
            if (!v) {
                numeric = false;
                break;
            }
            values.push_back(*v);
        }
        if (numeric) {
            bool binary = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
            c.kind = binary ? ColumnKind::binary : ColumnKind::continuous;
            c.values = std::move(values);
            return c;
        }
    }
    c.kind = ColumnKind::categorical;
    c.labels = raw;
    return c;
}

std::vector<std::string> covariate_names(const RawTable& raw, const ColumnRoles& roles) {
    if (!roles.covariates.empty()) return roles.covariates;
    std::vector<std::string> names;
    for (const auto& h : raw.header) {
        if (h == roles.outcome || h == roles.source || h == roles.treatment) continue;
        if (roles.effect_modifier && h == *roles.effect_modifier) continue;
        names.push_back(h);
    }
    return names;
}

} // namespace

MultiSourceDataset validate_dataset(const RawTable& raw, const ColumnRoles& roles) {
    if (raw.columns.size() != raw.header.size()) throw ValidationError("column length mismatch");
    std::size_t n = raw.rows();
    for (std::size_t j = 0; j < raw.columns.size(); ++j)
        if (raw.columns[j].size() != n)
            throw ValidationError("column length mismatch: '" + raw.header[j] + "' has " +
                                  std::to_string(raw.columns[j].size()) + " rows, expected " + std::to_string(n));
    if (n == 0) throw ValidationError("dataset has no rows");

    const auto& y_raw = raw.column(roles.outcome);
    const auto& s_raw = raw.column(roles.source);
    const auto& a_raw = raw.column(roles.treatment);

    std::vector<std::string> cov_names = covariate_names(raw, roles);
    if (roles.effect_modifier && contains(cov_names, *roles.effect_modifier))
        throw ValidationError("effect modifier '" + *roles.effect_modifier +
                              "' must not also be listed as a covariate");
    for (const auto& name : cov_names)
        if (name == roles.outcome || name == roles.source || name == roles.treatment)
            throw ValidationError("column '" + name + "' cannot be both a covariate and a role column");

    MultiSourceDataset d;
    reject_missing(roles.outcome, y_raw);
    d.outcome.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto v = parse_number(y_raw[i]);
        if (!v) throw ValidationError("outcome is not a finite number at " + where(roles.outcome, i));
        d.outcome[i] = *v;
    }

    reject_missing(roles.treatment, a_raw);
    d.treatment.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto v = parse_number(a_raw[i]);
        if (!v || (*v != 0.0 && *v != 1.0))
            throw ValidationError("treatment not coded 0/1 at " + where(roles.treatment, i) + ": '" + a_raw[i] + "'");
        d.treatment[i] = static_cast<int>(*v);
    }

    reject_missing(roles.source, s_raw);
    d.source_labels = canonical_levels(s_raw);
    d.source = index_labels(s_raw, d.source_labels);

    if (roles.effect_modifier) {
        const auto& em = raw.column(*roles.effect_modifier);
        reject_missing(*roles.effect_modifier, em);
        d.effect_modifier = em;
        d.effect_modifier_name = *roles.effect_modifier;
    }

    for (const auto& name : cov_names) {
        bool force = contains(roles.categorical, name);
        d.covariates.columns.push_back(parse_covariate(name, raw.column(name), force));
    }
    return d;
}

ExternalSample validate_external(const RawTable& raw, const ColumnRoles& roles, const MultiSourceDataset& reference) {
    std::size_t n = raw.rows();
    for (std::size_t j = 0; j < raw.columns.size(); ++j)
        if (raw.columns[j].size() != n) throw ValidationError("column length mismatch in external data");
    if (n == 0) throw ValidationError("external dataset has no rows");

    std::vector<std::string> expected;
    for (const auto& c : reference.covariates.columns) expected.push_back(c.name);
    std::vector<std::string> found;
    for (const auto& h : raw.header) {
        if (h == roles.outcome || h == roles.source || h == roles.treatment) continue;
        if (roles.effect_modifier && h == *roles.effect_modifier) continue;
        if (!reference.effect_modifier_name.empty() && h == reference.effect_modifier_name) continue;
        found.push_back(h);
    }
    if (found != expected) {
        auto join = [](const std::vector<std::string>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
            return s;
        };
        throw ValidationError("external covariate columns do not match the multi-source schema (expected " +
                              join(expected) + "; found " + join(found) + ")");
    }

    ExternalSample ext;
    for (const auto& ref : reference.covariates.columns) {
        const auto& col = raw.column(ref.name);
        reject_missing(ref.name, col);
        Covariate c;
        c.name = ref.name;
        c.kind = ref.kind;
        if (ref.kind == ColumnKind::categorical) {
            c.labels = col;
        } else {
            c.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                auto v = parse_number(col[i]);
                if (!v) throw ValidationError("non-numeric value in external " + where(ref.name, i));
                if (ref.kind == ColumnKind::binary && *v != 0.0 && *v != 1.0)
                    throw ValidationError("binary covariate takes a value other than 0/1 in external " +
                                          where(ref.name, i));
                c.values[i] = *v;
            }
        }
        ext.covariates.columns.push_back(std::move(c));
    }
    if (reference.has_effect_modifier()) {
        std::size_t j = raw.find(reference.effect_modifier_name);
        if (j == RawTable::npos)
            throw ValidationError("external data missing effect modifier column '" +
                                  reference.effect_modifier_name + "'");
        reject_missing(reference.effect_modifier_name, raw.columns[j]);
        ext.effect_modifier = raw.columns[j];
    }
    // Surface unseen levels here rather than at encoding time.
    DesignEncoder::learn(reference.covariates, reference.effect_modifier, reference.effect_modifier_name)
        .encode(ext.covariates, ext.effect_modifier ? &*ext.effect_modifier : nullptr);
    return ext;
}

namespace {

void write_covariate_field(std::ostream& out, const Covariate& c, std::size_t i) {
    if (c.kind == ColumnKind::categorical)
        out << csv_escape(c.labels[i]);
    else
        out << format_double(c.values[i]);
}

} // namespace

void write_dataset_csv(std::ostream& out, const MultiSourceDataset& data) {
    std::string em_name = data.effect_modifier_name.empty() ? "EM" : data.effect_modifier_name;
    out << "Y,S,A";
    if (data.has_effect_modifier()) out << ',' << csv_escape(em_name);
    for (const auto& c : data.covariates.columns) out << ',' << csv_escape(c.name);
    out << '\n';
    for (std::size_t i = 0; i < data.n(); ++i) {
        out << format_double(data.outcome[i]) << ',' << csv_escape(data.source_labels[data.source[i]]) << ','
            << data.treatment[i];
        if (data.has_effect_modifier()) out << ',' << csv_escape((*data.effect_modifier)[i]);
        for (const auto& c : data.covariates.columns) {
            out << ',';
            write_covariate_field(out, c, i);
        }
        out << '\n';
    }
}

void write_external_csv(std::ostream& out, const ExternalSample& data, const std::string& effect_modifier_name) {
    bool first = true;
    auto sep = [&] {
        if (!first) out << ',';
        first = false;
    };
    if (data.effect_modifier) {
        sep();
        out << csv_escape(effect_modifier_name);
    }
    for (const auto& c : data.covariates.columns) {
        sep();
        out << csv_escape(c.name);
    }
    out << '\n';
    for (std::size_t i = 0; i < data.n(); ++i) {
        first = true;
        if (data.effect_modifier) {
            sep();
            out << csv_escape((*data.effect_modifier)[i]);
        }
        for (const auto& c : data.covariates.columns) {
            sep();
            write_covariate_field(out, c, i);
        }
        out << '\n';
    }
}

DesignEncoder DesignEncoder::learn(const CovariateTable& covariates,
                                   const std::optional<std::vector<std::string>>& effect_modifier,
                                   const std::string& effect_modifier_name) {
    DesignEncoder enc;
    enc.columns_.push_back({"(Intercept)", {}});
    for (const auto& c : covariates.columns) {
        Variable v{c.name, c.kind, {}};
        if (c.kind == ColumnKind::categorical) {
            v.levels = canonical_levels(c.labels);
            for (std::size_t k = 1; k < v.levels.size(); ++k) enc.columns_.push_back({c.name, v.levels[k]});
        } else {
            enc.columns_.push_back({c.name, {}});
        }
        enc.variables_.push_back(std::move(v));
    }
    if (effect_modifier) {
        Variable v{effect_modifier_name, ColumnKind::categorical, canonical_levels(*effect_modifier)};
        for (std::size_t k = 1; k < v.levels.size(); ++k) enc.columns_.push_back({v.name, v.levels[k]});
        enc.effect_modifier_ = std::move(v);
    }
    return enc;
}

std::size_t DesignEncoder::width() const { return columns_.size(); }

namespace {

void fill_standardization(DesignMatrix& d) {
    Eigen::Index n = d.rows(), p = d.cols();
    d.center = Eigen::VectorXd::Zero(p);
    d.scale = Eigen::VectorXd::Ones(p);
    if (n == 0) return;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (j < static_cast<Eigen::Index>(d.columns.size()) && d.columns[j].variable == "(Intercept)") continue;
        double mean = d.values.col(j).mean();
        double sd = std::sqrt((d.values.col(j).array() - mean).square().mean());
        d.center(j) = mean;
        d.scale(j) = sd;
    }
}

void encode_categorical(Eigen::MatrixXd& out, Eigen::Index& col, const std::vector<std::string>& labels,
                        const std::vector<std::string>& levels, const std::string& name) {
    std::unordered_map<std::string, Eigen::Index> lookup;
    for (std::size_t k = 0; k < levels.size(); ++k) lookup.emplace(levels[k], static_cast<Eigen::Index>(k));
    Eigen::Index width = static_cast<Eigen::Index>(levels.size()) - 1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = lookup.find(labels[i]);
        if (it == lookup.end())
            throw ValidationError("unseen level '" + labels[i] + "' in column '" + name + "'");
        if (it->second > 0) out(static_cast<Eigen::Index>(i), col + it->second - 1) = 1.0;
    }
    col += width;
}

} // namespace

DesignMatrix DesignEncoder::encode(const CovariateTable& covariates, const std::vector<std::string>* effect_modifier) const {
    if (covariates.columns.size() != variables_.size())
        throw ValidationError("covariate schema mismatch: expected " + std::to_string(variables_.size()) +
                              " columns, found " + std::to_string(covariates.columns.size()));
    std::size_t n = covariates.rows();
    if (variables_.empty() && effect_modifier) n = effect_modifier->size();
    DesignMatrix d;
    d.columns = columns_;
    d.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(columns_.size()));
    d.values.col(0).setOnes();
    Eigen::Index col = 1;
    for (std::size_t j = 0; j < variables_.size(); ++j) {
        const auto& var = variables_[j];
        const auto& c = covariates.columns[j];
        if (c.name != var.name || c.kind != var.kind)
            throw ValidationError("covariate schema mismatch at position " + std::to_string(j + 1) + ": expected '" +
                                  var.name + "' (" + to_string(var.kind) + "), found '" + c.name + "' (" +
                                  to_string(c.kind) + ")");
        if (var.kind == ColumnKind::categorical) {
            if (c.labels.size() != n) throw ValidationError("column length mismatch in '" + c.name + "'");
            encode_categorical(d.values, col, c.labels, var.levels, var.name);
        } else {
            if (c.values.size() != n) throw ValidationError("column length mismatch in '" + c.name + "'");
            for (std::size_t i = 0; i < n; ++i) d.values(static_cast<Eigen::Index>(i), col) = c.values[i];
            ++col;
        }
    }
    if (effect_modifier_) {
        if (!effect_modifier) throw ValidationError("effect modifier '" + effect_modifier_->name + "' required");
        if (effect_modifier->size() != n) throw ValidationError("column length mismatch in effect modifier");
        encode_categorical(d.values, col, *effect_modifier, effect_modifier_->levels, effect_modifier_->name);
    }
    fill_standardization(d);
    return d;
}

DesignMatrix encode_design(const MultiSourceDataset& data, bool include_treatment, bool include_source) {
    auto enc = DesignEncoder::learn(data.covariates, data.effect_modifier, data.effect_modifier_name);
    DesignMatrix base = enc.encode(data.covariates, data.effect_modifier ? &*data.effect_modifier : nullptr);
    if (!include_treatment && !include_source) return base;

    Eigen::Index n = base.rows();
    Eigen::Index extra = (include_treatment ? 1 : 0) +
                         (include_source ? static_cast<Eigen::Index>(data.m()) - 1 : 0);
    DesignMatrix d;
    d.columns = base.columns;
    d.values.resize(n, base.cols() + extra);
    d.values.leftCols(base.cols()) = base.values;
    Eigen::Index col = base.cols();
    if (include_treatment) {
        for (Eigen::Index i = 0; i < n; ++i) d.values(i, col) = data.treatment[static_cast<std::size_t>(i)];
        d.columns.push_back({"A", {}});
        ++col;
    }
    if (include_source) {
        for (std::size_t s = 1; s < data.m(); ++s) {
            for (Eigen::Index i = 0; i < n; ++i)
                d.values(i, col) = data.source[static_cast<std::size_t>(i)] == static_cast<int>(s) ? 1.0 : 0.0;
            d.columns.push_back({"S", data.source_labels[s]});
            ++col;
        }
    }
    fill_standardization(d);
    return d;
}

namespace {

StackedDataset stack_impl(const MultiSourceDataset& data, const ExternalSample* external) {
    StackedDataset st;
    st.n_internal = data.n();
    st.n_external = external ? external->n() : 0;
    st.source_labels = data.source_labels;
    st.effect_modifier_name = data.effect_modifier_name;
    st.encoder = DesignEncoder::learn(data.covariates, data.effect_modifier, data.effect_modifier_name);

    std::size_t total = st.n_internal + st.n_external;
    st.source.resize(total);
    st.outcome.assign(total, std::nan(""));
    st.treatment.assign(total, -1);
    st.effect_modifier.assign(total, -1);
    for (std::size_t i = 0; i < st.n_internal; ++i) {
        st.source[i] = data.source[i] + 1;
        st.outcome[i] = data.outcome[i];
        st.treatment[i] = data.treatment[i];
    }
    for (std::size_t i = st.n_internal; i < total; ++i) st.source[i] = 0;

    if (data.has_effect_modifier()) {
        st.effect_modifier_levels = canonical_levels(*data.effect_modifier);
        auto codes = index_labels(*data.effect_modifier, st.effect_modifier_levels);
        std::copy(codes.begin(), codes.end(), st.effect_modifier.begin());
        if (external) {
            if (!external->effect_modifier)
                throw ValidationError("external data missing effect modifier '" + data.effect_modifier_name + "'");
            const auto& ext_em = *external->effect_modifier;
            for (std::size_t i = 0; i < ext_em.size(); ++i) {
                auto it = std::find(st.effect_modifier_levels.begin(), st.effect_modifier_levels.end(), ext_em[i]);
                if (it == st.effect_modifier_levels.end())
                    throw ValidationError("unseen level '" + ext_em[i] + "' in column '" + data.effect_modifier_name +
                                          "'");
                st.effect_modifier[st.n_internal + i] = static_cast<int>(it - st.effect_modifier_levels.begin());
            }
        }
    }

    DesignMatrix internal = st.encoder.encode(data.covariates, data.effect_modifier ? &*data.effect_modifier : nullptr);
    if (!external) {
        st.design = std::move(internal);
        return st;
    }
    DesignMatrix ext = st.encoder.encode(external->covariates,
                                         external->effect_modifier ? &*external->effect_modifier : nullptr);
    st.design.columns = internal.columns;
    st.design.values.resize(static_cast<Eigen::Index>(total), internal.cols());
    st.design.values.topRows(internal.rows()) = internal.values;
    st.design.values.bottomRows(ext.rows()) = ext.values;
    fill_standardization(st.design);
    return st;
}

} // namespace

StackedDataset stack_internal(const MultiSourceDataset& data) { return stack_impl(data, nullptr); }

StackedDataset stack_with_external(const MultiSourceDataset& data, const ExternalSample& external) {
    return stack_impl(data, &external);
}

} // namespace cmr
