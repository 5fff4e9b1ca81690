#include "decompnet/conv.hpp"

#include <string>

namespace decompnet {

void ConvKernelShape::validate() const {
    if (k_h < 1 || k_w < 1 || c_in < 1 || c_out < 1 || stride < 1)
        throw InvalidInputError("ConvKernelShape: all fields must be >= 1");
}

namespace {

void check_kernel(const ConvKernel& kernel) {
    kernel.shape.validate();
    const std::size_t expect =
        kernel.shape.k_h * kernel.shape.k_w * kernel.shape.c_in * kernel.shape.c_out;
    if (kernel.data.size() != expect)
        throw InvalidInputError("ConvKernel: data length " + std::to_string(kernel.data.size()) +
                                " does not match shape (" + std::to_string(expect) + ")");
}

} // namespace

DenseMatrix matricize_channel(const ConvKernel& kernel) {
    check_kernel(kernel);
    const auto& s = kernel.shape;
    // The tensor layout already matches the (k_h*k_w*c_in) x c_out matrix.
    return DenseMatrix(s.k_h * s.k_w * s.c_in, s.c_out, kernel.data);
}

ConvKernel dematricize_channel(const DenseMatrix& m, const ConvKernelShape& shape) {
    shape.validate();
    if (m.rows() != shape.k_h * shape.k_w * shape.c_in || m.cols() != shape.c_out)
        throw InvalidInputError("dematricize_channel: matrix shape does not match kernel shape");
    return ConvKernel{shape, m.storage()};
}

DenseMatrix matricize_spatial(const ConvKernel& kernel) {
    check_kernel(kernel);
    const auto& s = kernel.shape;
    if (s.is_1x1()) return matricize_channel(kernel);
    DenseMatrix m(s.k_h * s.c_in, s.k_w * s.c_out);
    for (std::size_t kh = 0; kh < s.k_h; ++kh)
        for (std::size_t kw = 0; kw < s.k_w; ++kw)
            for (std::size_t ci = 0; ci < s.c_in; ++ci)
                for (std::size_t co = 0; co < s.c_out; ++co)
                    m(kh * s.c_in + ci, kw * s.c_out + co) = kernel.at(kh, kw, ci, co);
    return m;
}

ConvKernel dematricize_spatial(const DenseMatrix& m, const ConvKernelShape& shape) {
    shape.validate();
    if (shape.is_1x1()) return dematricize_channel(m, shape);
    if (m.rows() != shape.k_h * shape.c_in || m.cols() != shape.k_w * shape.c_out)
        throw InvalidInputError("dematricize_spatial: matrix shape does not match kernel shape");
    ConvKernel kernel{shape, std::vector<double>(m.size())};
    for (std::size_t kh = 0; kh < shape.k_h; ++kh)
        for (std::size_t kw = 0; kw < shape.k_w; ++kw)
            for (std::size_t ci = 0; ci < shape.c_in; ++ci)
                for (std::size_t co = 0; co < shape.c_out; ++co)
                    kernel.at(kh, kw, ci, co) = m(kh * shape.c_in + ci, kw * shape.c_out + co);
    return kernel;
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
    if (in < k)
        throw InvalidInputError("conv: input extent " + std::to_string(in) +
                                " smaller than kernel " + std::to_string(k));
    return (in - k) / stride + 1;
}

DenseMatrix im2col(const double* sample, std::size_t h, std::size_t w,
                   const ConvKernelShape& shape) {
    const std::size_t oh = conv_out_extent(h, shape.k_h, shape.stride);
    const std::size_t ow = conv_out_extent(w, shape.k_w, shape.stride);
    DenseMatrix cols(oh * ow, shape.k_h * shape.k_w * shape.c_in);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t p = y * ow + x;
            std::size_t col = 0;
            for (std::size_t kh = 0; kh < shape.k_h; ++kh)
                for (std::size_t kw = 0; kw < shape.k_w; ++kw)
                    for (std::size_t ci = 0; ci < shape.c_in; ++ci) {
                        const std::size_t iy = y * shape.stride + kh;
                        const std::size_t ix = x * shape.stride + kw;
                        cols(p, col++) = sample[(ci * h + iy) * w + ix];
                    }
        }
    }
    return cols;
}

void col2im_add(const DenseMatrix& cols, std::size_t h, std::size_t w,
                const ConvKernelShape& shape, double* sample_grad) {
    const std::size_t oh = conv_out_extent(h, shape.k_h, shape.stride);
    const std::size_t ow = conv_out_extent(w, shape.k_w, shape.stride);
    if (cols.rows() != oh * ow || cols.cols() != shape.k_h * shape.k_w * shape.c_in)
        throw InvalidInputError("col2im_add: patch matrix shape mismatch");
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t p = y * ow + x;
            std::size_t col = 0;
            for (std::size_t kh = 0; kh < shape.k_h; ++kh)
                for (std::size_t kw = 0; kw < shape.k_w; ++kw)
                    for (std::size_t ci = 0; ci < shape.c_in; ++ci) {
                        const std::size_t iy = y * shape.stride + kh;
                        const std::size_t ix = x * shape.stride + kw;
                        sample_grad[(ci * h + iy) * w + ix] += cols(p, col++);
                    }
        }
    }
}

} // namespace decompnet
