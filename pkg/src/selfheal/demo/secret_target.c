/* Demo target: a tiny program whose protected function prints a line ten
 * times. Built with -O0 -fno-inline -fcf-protection=none -no-pie so
 * secret_target() keeps a stable shape (first byte: push %rbp = 0x55) and a
 * fixed load address.
 *
 * Modes (combinable):
 *   --gate       print READY, wait for one line on stdin before running
 *   --unprotect  make secret_target's pages rwx at startup, so an external
 *                healer can write them through the vm transfer call
 *   --self-heal  scan secret_target's first byte for 0xCC and restore it
 *                in-process before running (CPU-side heal: this write is
 *                visible to hardware write-watchpoints)
 */
#include <stdio.h>
#include <string.h>
#include <sys/mman.h>
#include <unistd.h>

#define SECRET_LINES 10

__attribute__((noinline, used))
void secret_target(void)
{
    for (int i = 0; i < SECRET_LINES; ++i)
        puts("secret: license check ok");
}

static int unprotect_secret(void)
{
    long pagesize = sysconf(_SC_PAGESIZE);
    unsigned long page_start = (unsigned long)secret_target & ~(pagesize - 1);
    /* two pages: the function may straddle a boundary */
    if (mprotect((void *)page_start, 2 * pagesize,
                 PROT_READ | PROT_WRITE | PROT_EXEC) != 0) {
        perror("mprotect");
        return -1;
    }
    return 0;
}

static void self_heal(void)
{
    /* offset 0 is the only site this mode watches; the clean first byte of
     * an -O0, no-CET build is push %rbp */
    static const unsigned char original_first_byte = 0x55;
    volatile unsigned char *func = (unsigned char *)secret_target;

    if (*func != 0xCC) {
        fprintf(stderr, "self-heal: no breakpoint present\n");
        return;
    }
    fprintf(stderr, "self-heal: breakpoint detected\n");
    if (unprotect_secret() != 0) {
        fprintf(stderr, "self-heal: cannot remove breakpoint\n");
        return;
    }
    *func = original_first_byte;
    fprintf(stderr, "self-heal: breakpoint removed\n");
}

int main(int argc, char **argv)
{
    int gate = 0, unprotect = 0, heal = 0;

    setvbuf(stdout, NULL, _IONBF, 0);
    setvbuf(stderr, NULL, _IONBF, 0);

    for (int i = 1; i < argc; ++i) {
        if (strcmp(argv[i], "--gate") == 0)
            gate = 1;
        else if (strcmp(argv[i], "--unprotect") == 0)
            unprotect = 1;
        else if (strcmp(argv[i], "--self-heal") == 0)
            heal = 1;
        else {
            fprintf(stderr, "unknown flag: %s\n", argv[i]);
            return 2;
        }
    }

    if (unprotect && unprotect_secret() != 0)
        return 1;

    if (gate) {
        char line[64];
        puts("READY");
        if (fgets(line, sizeof line, stdin) == NULL) {
            fprintf(stderr, "gate: stdin closed\n");
            return 1;
        }
    }

    if (heal)
        self_heal();

    secret_target();
    return 0;
}
