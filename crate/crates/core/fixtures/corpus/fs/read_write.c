#include <linux/fs.h>

/*
 * vfs_read - read up to @count bytes from @file at *@pos into @buf.
 * Returns the number of bytes read or a negative errno.
 */
ssize_t vfs_read(struct file *file, char __user *buf, size_t count, loff_t *pos)
{
	ssize_t ret;

	if (!(file->f_mode & FMODE_READ))
		return -EBADF;
	if (!(file->f_mode & FMODE_CAN_READ))
		return -EINVAL;
	ret = rw_verify_area(READ, file, pos, count);
	if (ret)
		return ret;
	if (count > MAX_RW_COUNT)
		count = MAX_RW_COUNT;
	return file->f_op->read(file, buf, count, pos);
}

static inline int rw_flags_valid(int flags)
{
	/* { no body braces in comments count } */
	return (flags & ~RWF_SUPPORTED) == 0;
}
