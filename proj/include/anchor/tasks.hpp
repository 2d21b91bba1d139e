#ifndef ANCHOR_TASKS_HPP
#define ANCHOR_TASKS_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchor/rng.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
};

// A labeled pool of samples with contiguous global class ids 0..C-1.
struct Dataset {
    Tensor features;  // n x d
    std::vector<int> labels;
    std::optional<ImageShape> image_shape;

    [[nodiscard]] std::size_t class_count() const {
        int max_label = -1;
        for (int y : labels) max_label = std::max(max_label, y);
        return static_cast<std::size_t>(max_label + 1);
    }
};

// One classification task. Labels are local to the task (0..C_t-1); the
// original global class ids are kept for disjointness checks.
struct TaskSpec {
    int id = 0;
    std::vector<int> classes;  // global ids, index = local label
    Tensor train_x;
    std::vector<int> train_y;
    Tensor test_x;
    std::vector<int> test_y;
    std::optional<ImageShape> image_shape;

    [[nodiscard]] std::size_t class_count() const { return classes.size(); }
};

struct TaskStream {
    std::vector<TaskSpec> tasks;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t feature_dim() const {
        detail::check(!tasks.empty(), "TaskStream: empty stream");
        return tasks.front().train_x.cols();
    }
};

namespace detail {

// Gathers `rows` of `src` into a new tensor.
[[nodiscard]] inline Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
    Tensor out(rows.size(), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto from = src.row(rows[i]);
        auto to = out.row(i);
        std::copy(from.begin(), from.end(), to.begin());
    }
    return out;
}

struct SampleRef {
    std::size_t row;
    int local_label;
};

// Seeded per-class train/test split; every class keeps at least one training
// sample and, when it has two or more samples, at least one test sample.
inline void split_task_samples(const Tensor& features, const std::vector<SampleRef>& samples,
                               double test_fraction, Rng& rng, TaskSpec& task) {
    std::map<int, std::vector<std::size_t>> by_class;  // local label -> sample indices
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].local_label].push_back(i);

    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (auto& [label, indices] : by_class) {
        rng.shuffle(indices);
        std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(indices.size())));
        if (test_fraction == 0.0 || indices.size() < 2) n_test = 0;
        else n_test = std::clamp<std::size_t>(n_test, 1, indices.size() - 1);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            (i < n_test ? test_idx : train_idx).push_back(indices[i]);
        }
    }

    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i : train_idx) train_rows.push_back(samples[i].row);
    for (std::size_t i : test_idx) test_rows.push_back(samples[i].row);
    task.train_x = gather_rows(features, train_rows);
    task.test_x = gather_rows(features, test_rows);
    for (std::size_t i : train_idx) task.train_y.push_back(samples[i].local_label);
    for (std::size_t i : test_idx) task.test_y.push_back(samples[i].local_label);
}

}  // namespace detail

// Synthetic stream of Gaussian-blob classification tasks. Each global class
// gets a seeded random mean on the sphere of radius `spread`; samples are the
// mean plus unit isotropic noise. Class ids never repeat across tasks.
[[nodiscard]] inline TaskStream synth_blobs(std::size_t num_tasks, std::size_t classes_per_task,
                                            std::size_t dim, std::size_t samples_per_class, double spread,
                                            std::uint64_t seed, double test_fraction = 0.2) {
    detail::check(num_tasks > 0 && classes_per_task > 0 && dim > 0 && samples_per_class > 0,
                  "synth_blobs: counts must be positive");
    detail::check(test_fraction >= 0.0 && test_fraction < 1.0, "synth_blobs: test_fraction out of range");
    TaskStream stream;
    stream.seed = seed;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        TaskSpec task;
        task.id = static_cast<int>(t);
        Tensor features(classes_per_task * samples_per_class, dim);
        std::vector<detail::SampleRef> samples;
        for (std::size_t c = 0; c < classes_per_task; ++c) {
            const int global_class = static_cast<int>(t * classes_per_task + c);
            task.classes.push_back(global_class);

            Rng mean_rng(mix_seed(seed, static_cast<std::uint64_t>(global_class), 0xA1));
            std::vector<double> mean(dim);
            double norm = 0.0;
            for (double& m : mean) {
                m = mean_rng.gaussian();
                norm += m * m;
            }
            norm = std::sqrt(norm);
            for (double& m : mean) m = spread * m / (norm > 0.0 ? norm : 1.0);

            Rng sample_rng(mix_seed(seed, static_cast<std::uint64_t>(global_class), 0xA2));
            for (std::size_t s = 0; s < samples_per_class; ++s) {
                const std::size_t row = c * samples_per_class + s;
                for (std::size_t j = 0; j < dim; ++j) {
                    features(row, j) = mean[j] + sample_rng.gaussian();
                }
                samples.push_back({row, static_cast<int>(c)});
            }
        }
        Rng split_rng(mix_seed(seed, t, 0xA3));
        detail::split_task_samples(features, samples, test_fraction, split_rng, task);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

// Partitions a dataset's classes into consecutive groups of a seeded random
// class order; a remainder forms a final, smaller task. Labels are remapped
// to local indices.
[[nodiscard]] inline TaskStream split_by_class(const Dataset& data, std::size_t classes_per_task,
                                               std::uint64_t seed, double test_fraction = 0.2) {
    detail::check(data.labels.size() == data.features.rows(), "split_by_class: one label per row required");
    detail::check(!data.labels.empty(), "split_by_class: empty dataset");
    detail::check(classes_per_task > 0, "split_by_class: classes_per_task must be positive");
    const std::size_t num_classes = data.class_count();

    std::vector<int> class_order(num_classes);
    std::iota(class_order.begin(), class_order.end(), 0);
    Rng order_rng(mix_seed(seed, 0xB1));
    order_rng.shuffle(class_order);

    std::vector<std::vector<std::size_t>> rows_of_class(num_classes);
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        detail::check(data.labels[i] >= 0 && static_cast<std::size_t>(data.labels[i]) < num_classes,
                      "split_by_class: label out of range");
        rows_of_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    }

    TaskStream stream;
    stream.seed = seed;
    int task_id = 0;
    for (std::size_t start = 0; start < num_classes; start += classes_per_task) {
        const std::size_t end = std::min(start + classes_per_task, num_classes);
        TaskSpec task;
        task.id = task_id;
        task.image_shape = data.image_shape;
        std::vector<detail::SampleRef> samples;
        std::vector<std::size_t> rows;
        for (std::size_t c = start; c < end; ++c) {
            const int global_class = class_order[c];
            const int local = static_cast<int>(c - start);
            task.classes.push_back(global_class);
            for (std::size_t row : rows_of_class[static_cast<std::size_t>(global_class)]) {
                samples.push_back({rows.size(), local});
                rows.push_back(row);
            }
        }
        const Tensor features = detail::gather_rows(data.features, rows);
        Rng split_rng(mix_seed(seed, static_cast<std::uint64_t>(task_id), 0xB2));
        detail::split_task_samples(features, samples, test_fraction, split_rng, task);
        stream.tasks.push_back(std::move(task));
        ++task_id;
    }
    return stream;
}

// ---------------------------------------------------------------------------
// Loaders.
// ---------------------------------------------------------------------------

namespace detail {

[[nodiscard]] inline std::uint32_t read_u32_be(std::istream& in, const char* what) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw std::runtime_error(std::string("load_idx: truncated ") + what);
    return (static_cast<std::uint32_t>(bytes[0]) << 24) | (static_cast<std::uint32_t>(bytes[1]) << 16) |
           (static_cast<std::uint32_t>(bytes[2]) << 8) | static_cast<std::uint32_t>(bytes[3]);
}

}  // namespace detail

// IDX image/label pair (big-endian headers, magic 0x00000803 / 0x00000801).
// Pixels are scaled to [0, 1]; image shape metadata is preserved for
// width-axis augmentation.
[[nodiscard]] inline Dataset load_idx(const std::filesystem::path& images_path,
                                      const std::filesystem::path& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("load_idx: cannot open " + images_path.string());
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path.string());

    if (detail::read_u32_be(img, "image header") != 0x00000803u) {
        throw std::runtime_error("load_idx: bad image magic");
    }
    const std::uint32_t n = detail::read_u32_be(img, "image header");
    const std::uint32_t rows = detail::read_u32_be(img, "image header");
    const std::uint32_t cols = detail::read_u32_be(img, "image header");

    if (detail::read_u32_be(lab, "label header") != 0x00000801u) {
        throw std::runtime_error("load_idx: bad label magic");
    }
    const std::uint32_t n_labels = detail::read_u32_be(lab, "label header");
    if (n != n_labels) throw std::runtime_error("load_idx: image/label count mismatch");

    Dataset data;
    data.image_shape = ImageShape{rows, cols};
    data.features = Tensor(n, static_cast<std::size_t>(rows) * cols);
    std::vector<unsigned char> buffer(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
        if (!img) throw std::runtime_error("load_idx: truncated image data");
        for (std::size_t j = 0; j < buffer.size(); ++j) {
            data.features(i, j) = static_cast<double>(buffer[j]) / 255.0;
        }
    }
    std::vector<unsigned char> raw_labels(n);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n));
    if (!lab) throw std::runtime_error("load_idx: truncated label data");

    // Remap to contiguous ids so class-splitting can assume 0..C-1.
    std::vector<int> present(256, 0);
    for (unsigned char y : raw_labels) present[y] = 1;
    std::vector<int> remap(256, -1);
    int next = 0;
    for (int v = 0; v < 256; ++v) {
        if (present[v]) remap[v] = next++;
    }
    data.labels.reserve(n);
    for (unsigned char y : raw_labels) data.labels.push_back(remap[y]);
    return data;
}

// Tabular CSV with a header row; the last column is the integer class label,
// all other columns are features.
[[nodiscard]] inline Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: missing header row");

    std::vector<std::vector<double>> rows;
    std::vector<long long> raw_labels;
    std::size_t width = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> values;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv: bad value at line " + std::to_string(line_no));
            }
        }
        if (values.size() < 2) throw std::runtime_error("load_csv: need at least one feature and a label");
        if (width == 0) width = values.size();
        if (values.size() != width) throw std::runtime_error("load_csv: ragged row at line " + std::to_string(line_no));
        const double label = values.back();
        values.pop_back();
        const auto as_int = static_cast<long long>(std::llround(label));
        if (static_cast<double>(as_int) != label) {
            throw std::runtime_error("load_csv: non-integer label at line " + std::to_string(line_no));
        }
        raw_labels.push_back(as_int);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw std::runtime_error("load_csv: no data rows");

    std::vector<long long> sorted = raw_labels;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::map<long long, int> remap;
    for (std::size_t i = 0; i < sorted.size(); ++i) remap[sorted[i]] = static_cast<int>(i);

    Dataset data;
    data.features = Tensor(rows.size(), width - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j + 1 < width; ++j) data.features(i, j) = rows[i][j];
    }
    for (long long y : raw_labels) data.labels.push_back(remap.at(y));
    return data;
}

// Order-sensitive FNV-1a over the stream's sample bytes; two streams with the
// same hash and shape are identical.
[[nodiscard]] inline std::uint64_t stream_content_hash(const TaskStream& stream) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* ptr, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(ptr);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& task : stream.tasks) {
        mix_bytes(task.train_x.data().data(), task.train_x.size() * sizeof(double));
        mix_bytes(task.test_x.data().data(), task.test_x.size() * sizeof(double));
        mix_bytes(task.train_y.data(), task.train_y.size() * sizeof(int));
        mix_bytes(task.test_y.data(), task.test_y.size() * sizeof(int));
        mix_bytes(task.classes.data(), task.classes.size() * sizeof(int));
    }
    return h;
}

}  // namespace anchor

#endif  // ANCHOR_TASKS_HPP
