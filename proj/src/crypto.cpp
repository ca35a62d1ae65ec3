#include "maxsec/crypto.hpp"

#include "maxsec/errors.hpp"

#include <algorithm>
#include <memory>
#include <openssl/evp.h>
#include <zlib.h>

namespace maxsec::crypto {

namespace {

struct CtxDeleter {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

void run_cbc(const AesKey& key, Block& iv, std::span<std::uint8_t> data, bool encrypt)
{
    if (data.size() % 16 != 0)
        throw LengthMismatch("AES-CBC input must be a multiple of 16 bytes");
    if (data.empty())
        return;
    std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter> ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_CipherInit_ex(ctx.get(), EVP_aes_128_cbc(), nullptr, key.data(), iv.data(),
                                  encrypt ? 1 : 0) != 1)
        throw Error("AES context initialisation failed");
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    Block next_iv{};
    if (!encrypt)
        std::copy(data.end() - 16, data.end(), next_iv.begin());
    int outl = 0;
    if (EVP_CipherUpdate(ctx.get(), data.data(), &outl, data.data(), static_cast<int>(data.size())) != 1
        || static_cast<std::size_t>(outl) != data.size())
        throw Error("AES-CBC update failed");
    if (encrypt)
        std::copy(data.end() - 16, data.end(), next_iv.begin());
    iv = next_iv;
}

} // namespace

std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t crc)
{
    uLong c = crc;
    // zlib takes uInt lengths; chunk to stay portable.
    constexpr std::size_t kChunk = 1u << 30;
    for (std::size_t off = 0; off < data.size(); off += kChunk) {
        std::size_t n = std::min(kChunk, data.size() - off);
        c = ::crc32(c, data.data() + off, static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(c);
}

void cbc_encrypt(const AesKey& key, Block& iv, std::span<std::uint8_t> data)
{
    run_cbc(key, iv, data, true);
}

void cbc_decrypt(const AesKey& key, Block& iv, std::span<std::uint8_t> data)
{
    run_cbc(key, iv, data, false);
}

} // namespace maxsec::crypto
