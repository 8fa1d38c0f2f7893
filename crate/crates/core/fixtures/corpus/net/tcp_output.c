#include <net/tcp.h>

// Do all connect socket setups that can be done AF independent.
static void tcp_connect_init(struct sock *sk)
{
	const struct dst_entry *dst = __sk_dst_get(sk);
	struct tcp_sock *tp = tcp_sk(sk);

	tp->tcp_header_len = sizeof(struct tcphdr);
	tcp_mtup_init(sk);
	tcp_sync_mss(sk, dst_mtu(dst));
}

/* Build a SYN and send it off. */
int tcp_connect(struct sock *sk)
{
	struct tcp_sock *tp = tcp_sk(sk);
	struct sk_buff *buff;

	tcp_connect_init(sk);
	buff = tcp_stream_alloc_skb(sk, sk->sk_allocation, true);
	if (unlikely(!buff))
		return -ENOBUFS;
	return 0;
}
