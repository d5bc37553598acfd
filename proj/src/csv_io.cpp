#include "rectflow/csv_io.hpp"

#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <system_error>

#include "rectflow/errors.hpp"

namespace rectflow {

std::string format_number(double value)
{
    if (value == 0.0) return "0";
    char buffer[32];
    const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    if (ec != std::errc{}) throw NumericError("cannot format number", 0);
    return std::string(buffer, end);
}

std::string csv_field(const std::string& text)
{
    if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
    std::string quoted = "\"";
    for (char ch : text) {
        if (ch == '"') quoted += '"';
        quoted += ch;
    }
    return quoted + "\"";
}

namespace {

void write_coordinate_header(std::ostream& out, std::size_t dim)
{
    for (std::size_t j = 0; j < dim; ++j) out << ",x_" << j;
}

void write_coordinates(std::ostream& out, const Vec& x)
{
    for (double v : x.values()) out << ',' << format_number(v);
}

std::size_t result_dim(const SampleResult& result)
{
    if (!result.final_points.empty()) return result.final_points.front().size();
    return 0;
}

std::vector<std::string> split_fields(const std::string& line)
{
    std::vector<std::string> fields;
    std::string current;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(current);
            current.clear();
        } else {
            current.push_back(ch);
        }
    }
    fields.push_back(current);
    return fields;
}

template <typename T>
T parse_field(const std::string& field, std::size_t line_no, const char* name)
{
    T value{};
    const char* first = field.data();
    const char* last = first + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || field.empty()) {
        throw InputError("trajectory CSV line " + std::to_string(line_no) + ": bad " + name + " \"" + field + "\"");
    }
    return value;
}

} // namespace

void write_loss_csv(std::ostream& out, const TrainReport& report)
{
    std::map<std::size_t, double> rmse;
    for (const auto& p : report.oracle_rmse_curve) rmse[p.epoch] = p.value;
    out << "epoch,loss,oracle_rmse\n";
    for (const auto& p : report.loss_curve) {
        out << p.epoch << ',' << format_number(p.value) << ',';
        if (auto it = rmse.find(p.epoch); it != rmse.end()) out << format_number(it->second);
        out << '\n';
    }
}

void write_final_points_csv(std::ostream& out, const SampleResult& result)
{
    out << "chain";
    write_coordinate_header(out, result_dim(result));
    out << '\n';
    for (std::size_t i = 0; i < result.final_points.size(); ++i) {
        out << result.chain_ids[i];
        write_coordinates(out, result.final_points[i]);
        out << '\n';
    }
}

void write_trajectory_csv(std::ostream& out, const SampleResult& result)
{
    out << "chain,step,t";
    write_coordinate_header(out, result_dim(result));
    out << ",alpha,dv_norm,deviation\n";
    for (std::size_t i = 0; i < result.trajectories.size(); ++i) {
        const Trajectory& tr = result.trajectories[i];
        for (std::size_t k = 0; k < tr.states.size(); ++k) {
            out << result.chain_ids[i] << ',' << k << ',' << format_number(tr.times[k]);
            write_coordinates(out, tr.states[k]);
            if (k < tr.diagnostics.size()) {
                const StepDiagnostics& d = tr.diagnostics[k];
                out << ',' << format_number(d.alpha) << ',' << format_number(d.dv_norm) << ','
                    << format_number(d.deviation_from_conditional) << '\n';
            } else {
                out << ",,,\n";
            }
        }
    }
}

void write_deviation_csv(std::ostream& out, std::span<const DeviationPoint> curve)
{
    out << "t,sw,kl\n";
    for (const auto& p : curve) {
        out << format_number(p.t) << ',' << format_number(p.sliced_w) << ',';
        if (p.kl) out << format_number(*p.kl);
        out << '\n';
    }
}

TrajectoryTable read_trajectory_csv(std::istream& in)
{
    TrajectoryTable table;
    std::string line;
    if (!std::getline(in, line)) throw InputError("trajectory CSV line 1: missing header");
    const auto header = split_fields(line);
    if (header.size() < 7 || header[0] != "chain" || header[1] != "step" || header[2] != "t" ||
        header[header.size() - 3] != "alpha" || header[header.size() - 2] != "dv_norm" ||
        header.back() != "deviation") {
        throw InputError("trajectory CSV line 1: unexpected header");
    }
    table.dim = header.size() - 6;
    for (std::size_t j = 0; j < table.dim; ++j) {
        if (header[3 + j] != "x_" + std::to_string(j)) throw InputError("trajectory CSV line 1: unexpected header");
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw InputError("trajectory CSV line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        TrajectoryRow row;
        row.chain = parse_field<std::size_t>(fields[0], line_no, "chain");
        row.step = parse_field<std::size_t>(fields[1], line_no, "step");
        row.t = parse_field<double>(fields[2], line_no, "t");
        std::vector<double> x(table.dim);
        for (std::size_t j = 0; j < table.dim; ++j) x[j] = parse_field<double>(fields[3 + j], line_no, "coordinate");
        row.x = Vec(std::move(x));
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace rectflow
