#pragma once

// Little-endian primitive readers/writers shared by the DDRB dataset, DDRW
// checkpoint, and DDRT trajectory formats.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ddrb/util.hpp"

namespace ddrb::io {

void write_u16(std::ostream& out, uint16_t v);
void write_u32(std::ostream& out, uint32_t v);
void write_f32(std::ostream& out, float v);
void write_magic(std::ostream& out, const char magic[5]);
void write_string(std::ostream& out, const std::string& s);
void write_f32_array(std::ostream& out, const std::vector<double>& v);
void write_f32_array(std::ostream& out, const std::vector<float>& v);
void write_u16_array(std::ostream& out, const std::vector<uint16_t>& v);
void write_named_tensor(std::ostream& out, const NamedTensor& t);

uint16_t read_u16(std::istream& in);
uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);
void expect_magic(std::istream& in, const char magic[5], const std::string& where);
std::string read_string(std::istream& in);
std::vector<float> read_f32_array(std::istream& in, size_t count);
std::vector<uint16_t> read_u16_array(std::istream& in, size_t count);
NamedTensor read_named_tensor(std::istream& in);

}  // namespace ddrb::io
