#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace flsim {

// Dense row-major matrix of doubles. Nothing clever; the simulator only
// needs storage, row views and bounds-checked access.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) {
        check_cell(r, c);
        return data[r * cols + c];
    }
    double at(std::size_t r, std::size_t c) const {
        check_cell(r, c);
        return data[r * cols + c];
    }

    std::span<double> row(std::size_t r) {
        check_row(r);
        return {data.data() + r * cols, cols};
    }
    std::span<const double> row(std::size_t r) const {
        check_row(r);
        return {data.data() + r * cols, cols};
    }

    bool operator==(const Matrix&) const = default;

private:
    void check_row(std::size_t r) const {
        if (r >= rows) throw std::out_of_range("Matrix: row out of range");
    }
    void check_cell(std::size_t r, std::size_t c) const {
        if (r >= rows || c >= cols) throw std::out_of_range("Matrix: index out of range");
    }
};

}  // namespace flsim
