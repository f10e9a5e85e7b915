#!/usr/bin/env python3
"""Qubit and fermionic oracles: doubled-lattice assembly, extraction, walks.

Everything here is built directly from numpy tensor algebra with no shared code
with the C++ library. Frozen values go into the C++ tests.
"""
import numpy as np

H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
I2 = np.eye(2, dtype=complex)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)


def op_at(op_sites, ops, n):
    """Tensor product over n qubits with ops placed at op_sites (site 0 = leftmost)."""
    mats = [I2] * n
    for s, o in zip(op_sites, ops):
        mats[s] = o
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


def two_site_embed(U4, s0, s1, n):
    """Embed a 2-qubit unitary acting on (s0, s1) into n qubits."""
    d = 2 ** n
    out = np.zeros((d, d), dtype=complex)
    others = [k for k in range(n) if k not in (s0, s1)]
    for a in range(2):
        for b in range(2):
            for c in range(2):
                for e in range(2):
                    amp = U4[2 * a + b, 2 * c + e]
                    if amp == 0:
                        continue
                    # |a>_s0 |b>_s1 <c|_s0 <e|_s1 (x) identity elsewhere
                    ket = np.zeros((2, 2)* 0)  # placeholder
                    proj = [None] * n
                    proj[s0] = np.outer(
                        np.eye(2)[a], np.eye(2)[c]
                    ).astype(complex)
                    proj[s1] = np.outer(np.eye(2)[b], np.eye(2)[e]).astype(complex)
                    term = np.array([[1.0 + 0j]])
                    for k in range(n):
                        term = np.kron(term, proj[k] if proj[k] is not None else I2)
                    out += amp * term
    return out


def shift_unitary(r):
    """(Vx)_g = x_{g-1}: permutation of computational basis on r qubits."""
    d = 2 ** r
    V = np.zeros((d, d), dtype=complex)
    for idx in range(d):
        bits = [(idx >> (r - 1 - k)) & 1 for k in range(r)]  # site k = qubit k
        shifted = [bits[(k - 1) % r] for k in range(r)]
        out = sum(b << (r - 1 - k) for k, b in enumerate(shifted))
        V[out, idx] = 1.0
    return V


def global_onsite(u, r):
    out = np.array([[1.0 + 0j]])
    for _ in range(r):
        out = np.kron(out, u)
    return out


def assemble_w(r, u):
    """W = (prod_g S'_g) . S_G on the doubled lattice of r sites,
    qubit ordering: layer-0 sites 0..r-1 then layer-1 sites r..2r-1.
    S'_g for V = shift . u^(x)G : conjugated swap of (g+1 mod r, 0) with (g, 1),
    block (u (x) I) SWAP (u^dag (x) I) on those two qubits."""
    n = 2 * r
    d = 2 ** n
    # S_G: swap layer-0 site k with layer-1 site k for all k
    SG = np.eye(d, dtype=complex)
    for k in range(r):
        SG = two_site_embed(SWAP, k, r + k, n) @ SG
    B = np.kron(u, I2) @ SWAP @ np.kron(u.conj().T, I2)
    W = np.eye(d, dtype=complex)
    for g in range(r):
        W = two_site_embed(B, (g + 1) % r, r + g, n) @ W
    return W @ SG


def extract_v(W, r):
    """Prepare layer 1 in |0...0>, apply W, trace out layer 1; recover the
    unitary from the Choi top eigenvector."""
    n = 2 * r
    d0 = 2 ** r
    # channel on layer 0: rho -> Tr_1 [ W (rho (x) |0><0|) W^dag ]
    # Choi: sum_{ij} |i><j| (x) E(|i><j|)
    choi = np.zeros((d0 * d0, d0 * d0), dtype=complex)
    zero = np.zeros(2 ** r, dtype=complex)
    zero[0] = 1.0
    # basis vectors on layer 0
    for i in range(d0):
        ei = np.zeros(d0, dtype=complex)
        ei[i] = 1.0
        psi_i = np.kron(ei, zero)
        wi = W @ psi_i
        wi = wi.reshape(d0, d0)  # [layer0, layer1]
        for j in range(d0):
            ej = np.zeros(d0, dtype=complex)
            ej[j] = 1.0
            psi_j = np.kron(ej, zero)
            wj = (W @ psi_j).reshape(d0, d0)
            block = wi @ wj.conj().T  # Tr_1 of |wi><wj|
            choi[i * d0:(i + 1) * d0, j * d0:(j + 1) * d0] += block
    # top eigenvector of choi = vec(V^T) * d0 for a unitary channel
    vals, vecs = np.linalg.eigh(choi)
    top = vecs[:, -1] * np.sqrt(vals[-1])
    V = top.reshape(d0, d0).T
    # canonical phase: largest-magnitude entry made real positive
    k = np.argmax(np.abs(V))
    V = V * (abs(V.flat[k]) / V.flat[k])
    return V


def main():
    r = 3  # 3 sites -> doubled 6 qubits, 64-dim: cheap and representative
    for name, u in (("shift", I2), ("hadamard-shift", H)):
        W = assemble_w(r, u)
        target = global_onsite(u, r)
        Vdir = shift_unitary(r) @ target
        Winv = np.linalg.inv(W)
        # W = V (x) V^{-1}?
        VV = np.kron(Vdir, np.linalg.inv(Vdir))
        print(f"{name}: ||W - V(x)V^-1||max = {np.max(np.abs(W - VV)):.3e}")
        # S_G W S_G = W^{ -1 }?
        n = 2 * r
        SG = np.eye(2 ** n, dtype=complex)
        for k in range(r):
            SG = two_site_embed(SWAP, k, r + k, n) @ SG
        print(f"{name}: ||S_G W S_G - W^-1||max = "
              f"{np.max(np.abs(SG @ W @ SG - Winv)):.3e}")
        Vex = extract_v(W, r)
        # compare to direct V up to the same canonicalization
        k = np.argmax(np.abs(Vdir))
        Vdir_c = Vdir * (abs(Vdir.flat[k]) / Vdir.flat[k])
        print(f"{name}: ||extracted V - direct V||max = "
              f"{np.max(np.abs(Vex - Vdir_c)):.3e}")
        print(f"{name}: unitarity residual {np.max(np.abs(Vex @ Vex.conj().T - np.eye(2**r))):.3e}")
        # forward conjugation of X at site 0: lands at site 1, rotated by u
        F = op_at([0], [X], r)
        conj = Vdir @ F @ Vdir.conj().T
        expect = op_at([1], [u @ X @ u.conj().T], r)
        print(f"{name}: ||V X_0 V^-1 - (uXu^+)_1||max = {np.max(np.abs(conj - expect)):.3e}")

    # Bell pair partial trace
    bell = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    rho = np.outer(bell, bell.conj()).reshape(2, 2, 2, 2)
    red = np.trace(rho, axis1=1, axis2=3)
    print(f"bell partial trace: {np.round(red.real, 6).tolist()}")

    # fermionic walks on Z8, 2 modes per site: T = P (x) A + P^-1 (x) B
    r = 8
    P = np.zeros((r, r))
    for j in range(r):
        P[j, (j - 1) % r] = 1.0
    for name, (alpha, beta) in (("balanced", (1 / np.sqrt(2), 1 / np.sqrt(2))),
                                ("unbalanced", (0.8, 0.7))):
        A = np.array([[alpha, beta], [0, 0]])
        B = np.array([[0, 0], [beta, -alpha]])
        T = np.kron(P, A) + np.kron(P.T, B)
        resid = np.max(np.abs(T.conj().T @ T - np.eye(2 * r)))
        print(f"fermionic {name} walk ({alpha:.6f},{beta:.6f}): residual {resid:.12f}")


if __name__ == "__main__":
    main()
