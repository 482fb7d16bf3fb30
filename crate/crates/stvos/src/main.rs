fn main() {
    // placeholder; CLI wiring lands with the command implementations
}
